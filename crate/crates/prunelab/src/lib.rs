//! Desk-scale toolkit for studying what pruned networks lose beyond test
//! accuracy: functional similarity to the parent network, prune potential
//! under distribution shift, and excess error on corrupted data.
//!
//! The crate is self-contained: a small f64 tensor engine with reverse-mode
//! autodiff ([`tensor`]), masked networks ([`net`]), synthetic datasets and
//! corruption transforms ([`data`]), sensitivity-based pruning with an
//! iterative prune-retrain pipeline ([`prune`]), functional-distance metrics
//! ([`metrics`]), evaluation reports ([`eval`]), and a seeded experiment
//! runner ([`runner`]).

pub mod data;
pub mod eval;
pub mod metrics;
pub mod net;
pub mod prune;
pub mod rng;
pub mod runner;
pub mod tensor;

pub use net::MaskedNetwork;
pub use tensor::Tensor;
