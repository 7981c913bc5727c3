//! Per-seed metric outputs: noise-similarity tables and informative-feature
//! confidence heatmaps, written as JSON next to the run's checkpoints.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, RunError};
use crate::data::{Dataset, Split};
use crate::metrics::{
    back_select, cross_confidence, make_feature_mask, noise_similarity, predicted_class,
    SimilarityReport,
};
use crate::net::MaskedNetwork;
use crate::prune::{PruneMethod, PruneRun};

/// Similarity of the parent to one other network over the noise grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEntry {
    pub method: String,
    /// `child_<ratio>` or `independent`.
    pub other: String,
    pub ratio: f64,
    pub report: SimilarityReport,
}

pub(super) fn write_similarity(
    config: &ExperimentConfig,
    base: &Arc<Dataset>,
    metrics_dir: &Path,
    seed: u64,
    parent: &MaskedNetwork,
    independent: &MaskedNetwork,
    runs: &[(PruneMethod, PruneRun)],
) -> Result<(), RunError> {
    let (inputs, _) = base.head(Split::Test, config.similarity.samples);
    let grid = crate::metrics::DEFAULT_EPS_GRID;
    let reps = config.similarity.repetitions;
    let mut entries = Vec::new();
    entries.push(SimilarityEntry {
        method: String::new(),
        other: "independent".into(),
        ratio: 0.0,
        report: noise_similarity(parent, independent, &inputs, &grid, reps, seed)?,
    });
    for (method, run) in runs {
        for (record, net) in run.records.iter().zip(&run.checkpoints).skip(1) {
            if record.prune_ratio > config.similarity.max_ratio {
                continue;
            }
            entries.push(SimilarityEntry {
                method: method.criterion.name().into(),
                other: format!("child_{:.3}", record.prune_ratio),
                ratio: record.prune_ratio,
                report: noise_similarity(parent, net, &inputs, &grid, reps, seed)?,
            });
        }
    }
    let path = metrics_dir.join("similarity.json");
    std::fs::write(path, serde_json::to_string_pretty(&entries)?)?;
    Ok(())
}

/// One heatmap cell: mean confidence of `eval` on inputs masked to the
/// features the source network found informative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub source: String,
    pub eval: String,
    pub ratio: f64,
    pub sparsity: f64,
    pub inputs: usize,
    pub mean_true_confidence: f64,
    pub mean_predicted_confidence: f64,
}

pub(super) fn write_heatmap(
    config: &ExperimentConfig,
    base: &Arc<Dataset>,
    metrics_dir: &Path,
    seed: u64,
    parent: &MaskedNetwork,
    independent: &MaskedNetwork,
    runs: &[(PruneMethod, PruneRun)],
) -> Result<(), RunError> {
    let _ = seed;
    let rows: Vec<usize> =
        base.split_range(Split::Test).take(config.backselect.inputs).collect();
    let sparsity = config.backselect.sparsity;

    // the parent selects the informative features; everyone gets evaluated
    let mut evals: Vec<(String, f64, &MaskedNetwork)> =
        vec![("parent".into(), 0.0, parent), ("independent".into(), 0.0, independent)];
    for (method, run) in runs {
        for (record, net) in run.records.iter().zip(&run.checkpoints).skip(1) {
            evals.push((
                format!("{}_child_{:.3}", method.criterion.name(), record.prune_ratio),
                record.prune_ratio,
                net,
            ));
        }
    }

    let mut true_sums = vec![0.0; evals.len()];
    let mut pred_sums = vec![0.0; evals.len()];
    for &row in &rows {
        let sample = base.row(row);
        let label = base.labels()[row];
        let class = predicted_class(parent, sample)?;
        let ordering = back_select(parent, sample, class)?;
        let mask = make_feature_mask(&ordering, sparsity, "parent", row, class);
        for (k, (_, _, net)) in evals.iter().enumerate() {
            true_sums[k] += cross_confidence(net, &mask, sample, label)?;
            pred_sums[k] += cross_confidence(net, &mask, sample, class)?;
        }
    }

    let n = rows.len() as f64;
    let cells: Vec<HeatmapCell> = evals
        .iter()
        .enumerate()
        .map(|(k, (name, ratio, _))| HeatmapCell {
            source: "parent".into(),
            eval: name.clone(),
            ratio: *ratio,
            sparsity,
            inputs: rows.len(),
            mean_true_confidence: true_sums[k] / n,
            mean_predicted_confidence: pred_sums[k] / n,
        })
        .collect();
    std::fs::write(metrics_dir.join("heatmap.json"), serde_json::to_string_pretty(&cells)?)?;
    Ok(())
}
