//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls [`forward_op`], so it stays independent
//! of the backward rules it verifies. Exposed as a module (not test-only)
//! because the CLI offers a `gradcheck` command.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::ops::{forward_op, OpKind, Padding};
use super::{Graph, Tensor, TensorError};
use crate::rng::{stream, Purpose};

/// Scalarizes an op output as `mean(out * proj)` and differentiates it
/// numerically w.r.t. `inputs[wrt]` with per-element central differences.
pub fn central_diff(
    kind: OpKind,
    inputs: &[Tensor],
    wrt: usize,
    proj: &Tensor,
) -> Result<Vec<f64>, TensorError> {
    let eval = |tensors: &[Tensor]| -> Result<f64, TensorError> {
        let refs: Vec<&Tensor> = tensors.iter().collect();
        let out = forward_op(kind, &refs)?;
        let dot: f64 = out.data().iter().zip(proj.data()).map(|(&o, &p)| o * p).sum();
        Ok(dot / out.len() as f64)
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grad = vec![0.0; inputs[wrt].len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let x = inputs[wrt].data()[i];
        let h = 1e-5 * x.abs().max(1.0);
        work[wrt].data_mut()[i] = x + h;
        let plus = eval(&work)?;
        work[wrt].data_mut()[i] = x - h;
        let minus = eval(&work)?;
        work[wrt].data_mut()[i] = x;
        *g = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Same scalarization through the recorded graph and a backward pass.
pub fn analytic_grad(
    kind: OpKind,
    inputs: &[Tensor],
    wrt: usize,
    proj: &Tensor,
) -> Result<Vec<f64>, TensorError> {
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = g.apply(kind, &ids)?;
    let proj_id = g.leaf(proj.clone());
    let weighted = g.mul(out, proj_id)?;
    let loss = g.mean(weighted)?;
    g.backward(loss)?;
    Ok(g.grad(ids[wrt]).expect("leaf gradient populated").to_vec())
}

/// Relative error with a unit floor, the usual gradcheck metric.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[derive(Debug)]
pub struct SuiteReport {
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], away_from_zero: bool) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let mut v: f64 = rng.random_range(-2.0..2.0);
            while away_from_zero && v.abs() < 0.05 {
                v = rng.random_range(-2.0..2.0);
            }
            v
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite by construction")
}

fn one_hot_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        data[r * cols + rng.random_range(0..cols)] = 1.0;
    }
    Tensor::new(vec![rows, cols], data).expect("one-hot is finite")
}

/// Ops under test, with random inputs and the indices of the inputs we
/// differentiate with respect to.
fn cases(rng: &mut ChaCha8Rng) -> Vec<(OpKind, Vec<Tensor>, Vec<usize>)> {
    vec![
        (
            OpKind::MatMul,
            vec![rand_tensor(rng, &[3, 3], false), rand_tensor(rng, &[3, 3], false)],
            vec![0, 1],
        ),
        (
            OpKind::Conv2d(Padding::Same),
            vec![rand_tensor(rng, &[1, 2, 4, 4], false), rand_tensor(rng, &[2, 2, 3, 3], false)],
            vec![0, 1],
        ),
        (
            OpKind::Conv2d(Padding::Valid),
            vec![rand_tensor(rng, &[1, 2, 4, 4], false), rand_tensor(rng, &[2, 2, 3, 3], false)],
            vec![0, 1],
        ),
        (
            OpKind::AddBias,
            vec![rand_tensor(rng, &[3, 4], false), rand_tensor(rng, &[4], false)],
            vec![0, 1],
        ),
        (
            OpKind::AddBias,
            vec![rand_tensor(rng, &[1, 2, 3, 3], false), rand_tensor(rng, &[2], false)],
            vec![0, 1],
        ),
        (OpKind::Relu, vec![rand_tensor(rng, &[3, 3], true)], vec![0]),
        (OpKind::Flatten, vec![rand_tensor(rng, &[2, 2, 3], false)], vec![0]),
        (OpKind::Softmax, vec![rand_tensor(rng, &[3, 3], false)], vec![0]),
        (
            OpKind::CrossEntropyLoss,
            vec![rand_tensor(rng, &[3, 4], false), one_hot_rows(rng, 3, 4)],
            vec![0],
        ),
        (
            OpKind::Add,
            vec![rand_tensor(rng, &[3, 3], false), rand_tensor(rng, &[3, 3], false)],
            vec![0, 1],
        ),
        (
            OpKind::Mul,
            vec![rand_tensor(rng, &[3, 3], false), rand_tensor(rng, &[3, 3], false)],
            vec![0, 1],
        ),
        (OpKind::Mean, vec![rand_tensor(rng, &[3, 3], false)], vec![0]),
    ]
}

/// Runs `rounds` randomized cases over every op kind and input slot.
pub fn run_suite(rounds: usize, seed: u64) -> SuiteReport {
    let tolerance = 1e-4;
    let mut report = SuiteReport { cases: 0, max_rel_err: 0.0, tolerance, failures: Vec::new() };
    for round in 0..rounds {
        let mut rng = stream(Purpose::Noise, seed, round as u64);
        for (kind, inputs, wrts) in cases(&mut rng) {
            let proj = rand_tensor(
                &mut rng,
                forward_op(kind, &inputs.iter().collect::<Vec<_>>())
                    .expect("case inputs are valid")
                    .shape(),
                false,
            );
            for wrt in wrts {
                let numeric = central_diff(kind, &inputs, wrt, &proj).expect("valid case");
                let analytic = analytic_grad(kind, &inputs, wrt, &proj).expect("valid case");
                let err = relative_error(&analytic, &numeric);
                report.cases += 1;
                report.max_rel_err = report.max_rel_err.max(err);
                if err > tolerance {
                    report.failures.push(format!(
                        "round {round}: {kind:?} input {wrt}: rel err {err:.3e} > {tolerance:.0e}"
                    ));
                }
            }
        }
    }
    report
}
