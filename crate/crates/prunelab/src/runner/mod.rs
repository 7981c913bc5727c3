//! Experiment runner: declarative JSON configs, seeded multi-run
//! orchestration over a worker pool, result persistence, and flat CSV
//! report emission.
//!
//! Results land in `<out>/<config-hash>/seed_<s>/{checkpoints,curves,metrics}`
//! with a completion marker written last, so a crashed job never looks
//! finished and re-running skips completed `(config, seed)` pairs.

mod metrics_out;
mod report;

pub use report::{report, ReportPaths};


use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    make_synthetic, Corruption, DataError, Dataset, DatasetSpec, DistributionSpec,
};
use crate::eval::EvalError;
use crate::metrics::MetricsError;
use crate::net::{MaskedNetwork, NetError, NetworkSpec};
use crate::prune::{
    prune_retrain_from, train, PruneError, PruneMethod, PruneRun, PruneSchedule, TrainContext,
};
use crate::rng::Purpose;

/// Environment variable overriding the configured output directory.
pub const OUTPUT_ROOT_ENV: &str = "PRUNELAB_OUT";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("output dir holds multiple experiment hashes: {0:?}")]
    MixedConfigHashes(Vec<String>),
    #[error("nothing to report under {0}")]
    NothingToReport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Which evaluations a run performs on top of the pipeline itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricToggles {
    pub similarity: bool,
    pub backselect: bool,
    pub potential: bool,
    pub excess: bool,
    /// Train and retrain on the uniform corruption mix drawn from
    /// `train_corruptions`.
    pub robust_retrain: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self { similarity: false, backselect: false, potential: true, excess: true, robust_retrain: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilaritySettings {
    pub samples: usize,
    pub repetitions: usize,
    /// Children above this prune ratio are left out of the comparison.
    pub max_ratio: f64,
}

impl Default for SimilaritySettings {
    fn default() -> Self {
        Self { samples: 200, repetitions: 20, max_ratio: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackselectSettings {
    pub inputs: usize,
    pub sparsity: f64,
    /// Heatmaps are priced per input; limit how many seeds compute them.
    pub max_seeds: usize,
}

impl Default for BackselectSettings {
    fn default() -> Self {
        Self { inputs: 500, sparsity: 0.9, max_seeds: 1 }
    }
}

fn default_deltas() -> Vec<f64> {
    vec![0.0, 0.005, 0.01, 0.02, 0.05]
}

fn default_resamples() -> usize {
    1000
}

/// A complete experiment declaration. Round-trips losslessly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    pub methods: Vec<PruneMethod>,
    pub schedule: PruneSchedule,
    pub seeds: Vec<u64>,
    /// Corruption mix for robust (re-)training; must be disjoint by kind
    /// from the held-out part of `eval_corruptions`.
    #[serde(default)]
    pub train_corruptions: Vec<Corruption>,
    /// Everything curves and potentials are evaluated on. The held-out test
    /// distribution is this list minus the train kinds.
    #[serde(default)]
    pub eval_corruptions: Vec<Corruption>,
    #[serde(default)]
    pub metrics: MetricToggles,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub similarity: SimilaritySettings,
    #[serde(default)]
    pub backselect: BackselectSettings,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, RunError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config { path: path.display().to_string(), message: e.to_string() })?;
        let config: ExperimentConfig = serde_json::from_str(&raw)
            .map_err(|e| RunError::Config { path: path.display().to_string(), message: e.to_string() })?;
        config.validate().map_err(|message| RunError::Config {
            path: path.display().to_string(),
            message,
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.seeds.is_empty() {
            return Err("seeds: list must be non-empty".into());
        }
        if self.methods.is_empty() {
            return Err("methods: list must be non-empty".into());
        }
        if !(self.schedule.r_prune > 0.0 && self.schedule.r_prune < 1.0) {
            return Err(format!("schedule.r_prune: {} not in (0, 1)", self.schedule.r_prune));
        }
        if self.metrics.robust_retrain && self.train_corruptions.is_empty() {
            return Err("metrics.robust_retrain: needs a non-empty train_corruptions list".into());
        }
        if self.deltas.iter().any(|&d| d < 0.0) {
            return Err("deltas: margins must be nonnegative".into());
        }
        self.network.validate().map_err(|e| format!("network: {e}"))?;
        let input: usize = self.network.input_shape.iter().product();
        let features = match self.dataset.kind {
            crate::data::SyntheticKind::GaussianClusters { dim, .. } => dim,
            crate::data::SyntheticKind::ConcentricRings => 2,
            crate::data::SyntheticKind::TexturedPatches8x8 => 64,
        };
        if input != features {
            return Err(format!("network: input takes {input} features, dataset has {features}"));
        }
        Ok(())
    }

    /// Hash over everything that affects results (the output location does
    /// not). First 16 hex chars of a SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = String::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The corruption mix actually used during (re-)training.
    pub fn train_mix(&self) -> &[Corruption] {
        if self.metrics.robust_retrain {
            &self.train_corruptions
        } else {
            &[]
        }
    }

    /// Held-out corruptions: the eval list minus the train kinds.
    pub fn held_out(&self) -> Vec<Corruption> {
        let mix = self.train_mix();
        self.eval_corruptions
            .iter()
            .filter(|c| !mix.iter().any(|t| t.kind == c.kind))
            .copied()
            .collect()
    }

    /// Train and test distributions over a built dataset.
    pub fn distributions(
        &self,
        base: Arc<Dataset>,
    ) -> Result<(DistributionSpec, DistributionSpec), DataError> {
        DistributionSpec::train_test_pair(base, self.train_mix().to_vec(), self.held_out())
    }

    /// Nominal plus every evaluated corruption, the curve element list.
    pub fn curve_elements(&self) -> Vec<Option<Corruption>> {
        let mut out = vec![None];
        out.extend(self.eval_corruptions.iter().copied().map(Some));
        out
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var(OUTPUT_ROOT_ENV) {
            Ok(root) if !root.is_empty() => PathBuf::from(root),
            _ => PathBuf::from(&self.output_dir),
        }
    }
}

/// Completion marker and provenance for one `(config, seed)` job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub complete: bool,
    #[serde(default)]
    pub error: Option<String>,
    pub tool_version: String,
    pub wall_ms: u128,
}

pub struct RunSummary {
    pub run_dir: PathBuf,
    pub completed: usize,
    pub skipped: usize,
    pub failed: Vec<(u64, String)>,
}

pub(crate) fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

pub(crate) fn checkpoint_name(method: &PruneMethod, cycle: usize) -> String {
    format!("{}_cycle_{cycle}.plab", method.criterion.name())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn record_path(dir: &Path) -> PathBuf {
    dir.join("record.json")
}

fn load_record(dir: &Path) -> Option<RunRecord> {
    let raw = std::fs::read_to_string(record_path(dir)).ok()?;
    serde_json::from_str(&raw).ok()
}

/// One seed's full job: shared parent training, per-method prune-retrain,
/// the independent reference net when metrics need it, and all metric
/// outputs. Everything lands under `seed_<s>/`.
fn run_seed_job(config: &ExperimentConfig, base: &Arc<Dataset>, run_dir: &Path, seed: u64) -> Result<(), RunError> {
    let dir = seed_dir(run_dir, seed);
    let checkpoints = dir.join("checkpoints");
    let curves = dir.join("curves");
    let metrics_dir = dir.join("metrics");
    for d in [&dir, &checkpoints, &curves, &metrics_dir] {
        std::fs::create_dir_all(d)?;
    }

    let (train_dist, _) = config.distributions(Arc::clone(base))?;

    // shared parent: Train(RandomInit) once, reused by every method
    let mut parent = MaskedNetwork::init(&config.network, seed)?;
    let ctx = TrainContext { data: base, augment: config.train_mix(), seed, cycle: 0 };
    let stats = train(&mut parent, config.schedule.n_train, &config.schedule.train, &ctx)?;
    parent.save_checkpoint(&checkpoints.join("parent.plab"))?;

    let mut runs: Vec<(PruneMethod, PruneRun)> = Vec::new();
    for method in &config.methods {
        let run = prune_retrain_from(
            parent.clone(),
            stats.final_loss,
            method,
            &config.schedule,
            &train_dist,
            seed,
        )?;
        for (cycle, net) in run.checkpoints.iter().enumerate().skip(1) {
            net.save_checkpoint(&checkpoints.join(checkpoint_name(method, cycle)))?;
        }
        write_atomic(
            &curves.join(format!("records_{}.json", method.criterion.name())),
            serde_json::to_string_pretty(&run.records)?.as_bytes(),
        )?;
        runs.push((method.clone(), run));
    }

    let needs_reference = config.metrics.similarity || config.metrics.backselect;
    let independent = if needs_reference {
        let mut net = MaskedNetwork::init_with_purpose(&config.network, seed, Purpose::IndependentInit)?;
        train(&mut net, config.schedule.n_train, &config.schedule.train, &ctx)?;
        net.save_checkpoint(&checkpoints.join("independent.plab"))?;
        Some(net)
    } else {
        None
    };

    if config.metrics.similarity {
        let reference = independent.as_ref().expect("trained above");
        metrics_out::write_similarity(config, base, &metrics_dir, seed, &parent, reference, &runs)?;
    }
    if config.metrics.backselect {
        let seed_rank = config.seeds.iter().position(|&s| s == seed).unwrap_or(usize::MAX);
        if seed_rank < config.backselect.max_seeds {
            let reference = independent.as_ref().expect("trained above");
            metrics_out::write_heatmap(config, base, &metrics_dir, seed, &parent, reference, &runs)?;
        }
    }
    Ok(())
}

/// Executes every `(config, seed)` job, skipping completed ones, then
/// regenerates the report. Jobs run on up to `workers` threads; outputs
/// depend only on `(config, seed)`, never on scheduling.
pub fn run(config: &ExperimentConfig, workers: usize) -> Result<RunSummary, RunError> {
    config.validate().map_err(|message| RunError::Config { path: config.name.clone(), message })?;
    let hash = config.hash();
    let run_dir = config.resolved_output_dir().join(&hash);
    std::fs::create_dir_all(&run_dir)?;
    write_atomic(&run_dir.join("config.json"), serde_json::to_string_pretty(config)?.as_bytes())?;

    let base = Arc::new(make_synthetic(&config.dataset)?);

    let mut pending: VecDeque<u64> = VecDeque::new();
    let mut skipped = 0usize;
    for &seed in &config.seeds {
        match load_record(&seed_dir(&run_dir, seed)) {
            Some(record) if record.complete && record.config_hash == hash => skipped += 1,
            _ => pending.push_back(seed),
        }
    }

    let queue = Mutex::new(pending);
    let results: Mutex<Vec<(u64, Result<u128, String>)>> = Mutex::new(Vec::new());
    let workers = workers.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some(seed) = queue.lock().expect("queue lock").pop_front() else {
                    break;
                };
                let started = std::time::Instant::now();
                let outcome = run_seed_job(config, &base, &run_dir, seed)
                    .map(|()| started.elapsed().as_millis())
                    .map_err(|e| e.to_string());
                results.lock().expect("results lock").push((seed, outcome));
            });
        }
    });

    let mut completed = 0usize;
    let mut failed = Vec::new();
    for (seed, outcome) in results.into_inner().expect("results lock") {
        let dir = seed_dir(&run_dir, seed);
        std::fs::create_dir_all(&dir)?;
        let record = match outcome {
            Ok(wall_ms) => {
                completed += 1;
                RunRecord {
                    config_hash: hash.clone(),
                    seed,
                    complete: true,
                    error: None,
                    tool_version: env!("CARGO_PKG_VERSION").to_string(),
                    wall_ms,
                }
            }
            Err(message) => {
                failed.push((seed, message.clone()));
                RunRecord {
                    config_hash: hash.clone(),
                    seed,
                    complete: false,
                    error: Some(message),
                    tool_version: env!("CARGO_PKG_VERSION").to_string(),
                    wall_ms: 0,
                }
            }
        };
        write_atomic(&record_path(&dir), serde_json::to_string_pretty(&record)?.as_bytes())?;
    }

    if completed + skipped > 0 {
        report(&run_dir)?;
    }
    Ok(RunSummary { run_dir, completed, skipped, failed })
}
