//! Report generation: merges per-seed run records into flat CSV tables and
//! JSON reports under `<run-dir>/report/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::metrics_out::{HeatmapCell, SimilarityEntry};
use super::{checkpoint_name, seed_dir, ExperimentConfig, RunError, RunRecord};
use crate::data::{make_synthetic, Corruption, Split};
use crate::eval::{
    excess_curve, excess_regression, prune_accuracy_curve, prune_potential, sample_std,
    CurveInput, ExcessPoint, PruneAccuracyCurve, PrunePotentialReport,
};
use crate::net::MaskedNetwork;
use crate::prune::EvalRecord;

pub struct ReportPaths {
    pub report_dir: PathBuf,
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Accepts either a run directory (containing `config.json`) or an output
/// root holding exactly one run directory.
fn resolve_run_dir(dir: &Path) -> Result<PathBuf, RunError> {
    if dir.join("config.json").is_file() {
        return Ok(dir.to_path_buf());
    }
    let mut candidates = Vec::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.join("config.json").is_file() {
                candidates.push(path);
            }
        }
    }
    candidates.sort();
    match candidates.len() {
        0 => Err(RunError::NothingToReport(dir.display().to_string())),
        1 => Ok(candidates.remove(0)),
        _ => Err(RunError::MixedConfigHashes(
            candidates
                .iter()
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect(),
        )),
    }
}

/// One method's records plus `(ratio, net)` checkpoints in cycle order.
type MethodRun = (Vec<EvalRecord>, Vec<(f64, MaskedNetwork)>);

struct SeedData {
    seed: u64,
    runs: Vec<MethodRun>,
}

fn load_seed(
    config: &ExperimentConfig,
    run_dir: &Path,
    seed: u64,
) -> Result<SeedData, RunError> {
    let dir = seed_dir(run_dir, seed);
    let checkpoints = dir.join("checkpoints");
    let parent = MaskedNetwork::load_checkpoint(&checkpoints.join("parent.plab"))?;
    let mut runs = Vec::with_capacity(config.methods.len());
    for method in &config.methods {
        let raw = std::fs::read_to_string(
            dir.join("curves").join(format!("records_{}.json", method.criterion.name())),
        )?;
        let records: Vec<EvalRecord> = serde_json::from_str(&raw)?;
        let mut nets = vec![(records[0].prune_ratio, parent.clone())];
        for record in records.iter().skip(1) {
            let net =
                MaskedNetwork::load_checkpoint(&checkpoints.join(checkpoint_name(method, record.cycle)))?;
            nets.push((record.prune_ratio, net));
        }
        runs.push((records, nets));
    }
    Ok(SeedData { seed, runs })
}

fn complete_seeds(config: &ExperimentConfig, run_dir: &Path, hash: &str) -> Result<Vec<u64>, RunError> {
    let mut seeds = Vec::new();
    let mut foreign = Vec::new();
    for &seed in &config.seeds {
        let path = seed_dir(run_dir, seed).join("record.json");
        let Ok(raw) = std::fs::read_to_string(&path) else { continue };
        let record: RunRecord = serde_json::from_str(&raw)?;
        if record.config_hash != hash {
            foreign.push(record.config_hash);
            continue;
        }
        if record.complete {
            seeds.push(seed);
        }
    }
    if !foreign.is_empty() {
        foreign.push(hash.to_string());
        foreign.sort();
        foreign.dedup();
        return Err(RunError::MixedConfigHashes(foreign));
    }
    Ok(seeds)
}

/// Rebuilds every report table from the raw records on disk.
pub fn report(dir: &Path) -> Result<ReportPaths, RunError> {
    let run_dir = resolve_run_dir(dir)?;
    let config: ExperimentConfig =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("config.json"))?)?;
    let hash = config.hash();
    let seeds = complete_seeds(&config, &run_dir, &hash)?;
    if seeds.is_empty() {
        return Err(RunError::NothingToReport(run_dir.display().to_string()));
    }
    let report_dir = run_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;

    let base = Arc::new(make_synthetic(&config.dataset)?);
    let data: Vec<SeedData> =
        seeds.iter().map(|&s| load_seed(&config, &run_dir, s)).collect::<Result<_, _>>()?;

    let elements = config.curve_elements();
    let mut curve_rows: Vec<Vec<String>> = Vec::new();
    let mut potential_rows: Vec<Vec<String>> = Vec::new();
    let mut all_curves: Vec<PruneAccuracyCurve> = Vec::new();
    let mut all_potentials: Vec<PrunePotentialReport> = Vec::new();

    for (m, method) in config.methods.iter().enumerate() {
        let inputs: Vec<CurveInput<'_>> = data
            .iter()
            .map(|sd| CurveInput {
                seed: sd.seed,
                nets: sd.runs[m].1.iter().map(|(r, n)| (*r, n)).collect(),
            })
            .collect();
        for element in &elements {
            let curve = prune_accuracy_curve(
                method.criterion.name(),
                element.as_ref(),
                &inputs,
                &base,
                Split::Test,
            )?;
            for point in &curve.points {
                curve_rows.push(vec![
                    curve.method.clone(),
                    fmt(point.ratio),
                    curve.distribution.clone(),
                    "error".into(),
                    fmt(point.mean),
                    fmt(point.std),
                ]);
            }
            if config.metrics.potential {
                for &delta in &config.deltas {
                    let report = prune_potential(&curve, delta);
                    potential_rows.push(vec![
                        report.method.clone(),
                        fmt(delta),
                        report.distribution.clone(),
                        fmt(report.mean),
                        fmt(report.std),
                    ]);
                    all_potentials.push(report);
                }
            }
            all_curves.push(curve);
        }
    }
    write_csv(
        &report_dir.join("curve.csv"),
        &["method", "ratio", "distribution", "metric", "mean", "std"],
        &curve_rows,
    )?;
    std::fs::write(report_dir.join("curves.json"), serde_json::to_string_pretty(&all_curves)?)?;

    if config.metrics.potential {
        write_csv(
            &report_dir.join("potential.csv"),
            &["method", "delta", "distribution", "mean", "std"],
            &potential_rows,
        )?;
        std::fs::write(
            report_dir.join("potential.json"),
            serde_json::to_string_pretty(&all_potentials)?,
        )?;
        write_potential_summary(&config, &seeds, &all_potentials, &report_dir)?;
    }

    if config.metrics.excess {
        write_excess(&config, &data, &base, &report_dir)?;
    }
    if config.metrics.similarity {
        merge_similarity(&config, &run_dir, &seeds, &report_dir)?;
    }
    if config.metrics.backselect {
        merge_heatmaps(&config, &run_dir, &seeds, &report_dir)?;
    }
    Ok(ReportPaths { report_dir })
}

/// Per-seed average and minimum potential over each distribution's
/// elements, then mean and std over seeds.
fn write_potential_summary(
    config: &ExperimentConfig,
    seeds: &[u64],
    potentials: &[PrunePotentialReport],
    report_dir: &Path,
) -> Result<(), RunError> {
    let train_labels: Vec<String> = {
        let mut labels = vec!["nominal".to_string()];
        labels.extend(config.train_mix().iter().map(Corruption::label));
        labels
    };
    let held_out = config.held_out();
    let test_labels: Vec<String> = if held_out.is_empty() {
        vec!["nominal".to_string()]
    } else {
        held_out.iter().map(Corruption::label).collect()
    };

    let mut rows = Vec::new();
    for method in &config.methods {
        for &delta in &config.deltas {
            for (role, labels) in [("train_dist", &train_labels), ("test_dist", &test_labels)] {
                let member = |report: &&PrunePotentialReport| {
                    report.method == method.criterion.name()
                        && report.delta == delta
                        && labels.contains(&report.distribution)
                };
                let group: Vec<&PrunePotentialReport> =
                    potentials.iter().filter(member).collect();
                if group.is_empty() {
                    continue;
                }
                let mut avgs = Vec::with_capacity(seeds.len());
                let mut mins = Vec::with_capacity(seeds.len());
                for s in 0..seeds.len() {
                    let per_seed: Vec<f64> = group.iter().map(|r| r.per_seed[s]).collect();
                    avgs.push(per_seed.iter().sum::<f64>() / per_seed.len() as f64);
                    mins.push(per_seed.iter().copied().fold(f64::INFINITY, f64::min));
                }
                for (statistic, values) in [("average", &avgs), ("minimum", &mins)] {
                    rows.push(vec![
                        method.criterion.name().into(),
                        fmt(delta),
                        role.into(),
                        statistic.into(),
                        fmt(values.iter().sum::<f64>() / values.len() as f64),
                        fmt(sample_std(values)),
                    ]);
                }
            }
        }
    }
    write_csv(
        &report_dir.join("potential_summary.csv"),
        &["method", "delta", "distribution", "statistic", "mean", "std"],
        &rows,
    )
}

fn write_excess(
    config: &ExperimentConfig,
    data: &[SeedData],
    base: &Arc<crate::data::Dataset>,
    report_dir: &Path,
) -> Result<(), RunError> {
    let (train_dist, test_dist) = config.distributions(Arc::clone(base))?;
    let mut point_rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut regression_rows = Vec::new();
    for (m, method) in config.methods.iter().enumerate() {
        let inputs: Vec<CurveInput<'_>> = data
            .iter()
            .map(|sd| CurveInput {
                seed: sd.seed,
                nets: sd.runs[m].1.iter().map(|(r, n)| (*r, n)).collect(),
            })
            .collect();
        let points = excess_curve(&inputs, &train_dist, &test_dist, Split::Test)?;
        for p in &points {
            point_rows.push(vec![
                method.criterion.name().into(),
                p.seed.to_string(),
                fmt(p.ratio),
                fmt(p.diff),
            ]);
        }
        let ratios: Vec<f64> = data[0].runs[m].1.iter().map(|&(r, _)| r).collect();
        for &ratio in &ratios {
            let diffs: Vec<f64> = points
                .iter()
                .filter(|p| p.ratio == ratio)
                .map(|p| p.diff)
                .collect();
            summary_rows.push(vec![
                method.criterion.name().into(),
                fmt(ratio),
                "testdist".into(),
                "excess_diff".into(),
                fmt(diffs.iter().sum::<f64>() / diffs.len() as f64),
                fmt(sample_std(&diffs)),
            ]);
        }
        let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.ratio, p.diff)).collect();
        match excess_regression(&pairs, config.bootstrap_resamples, config.dataset.seed) {
            Ok(reg) => regression_rows.push(vec![
                method.criterion.name().into(),
                fmt(reg.slope),
                fmt(reg.ci_lo),
                fmt(reg.ci_hi),
                reg.resamples.to_string(),
            ]),
            Err(crate::eval::EvalError::TooFewPoints | crate::eval::EvalError::AllRatiosZero) => {}
            Err(e) => return Err(e.into()),
        }
        std::fs::write(
            report_dir.join(format!("excess_{}.json", method.criterion.name())),
            serde_json::to_string_pretty(&points.iter().collect::<Vec<&ExcessPoint>>())?,
        )?;
    }
    write_csv(
        &report_dir.join("excess.csv"),
        &["method", "seed", "ratio", "excess_diff"],
        &point_rows,
    )?;
    write_csv(
        &report_dir.join("excess_summary.csv"),
        &["method", "ratio", "distribution", "metric", "mean", "std"],
        &summary_rows,
    )?;
    write_csv(
        &report_dir.join("regression.csv"),
        &["method", "slope", "ci_lo", "ci_hi", "resamples"],
        &regression_rows,
    )?;
    Ok(())
}

fn merge_similarity(
    config: &ExperimentConfig,
    run_dir: &Path,
    seeds: &[u64],
    report_dir: &Path,
) -> Result<(), RunError> {
    let _ = config;
    let mut rows = Vec::new();
    for &seed in seeds {
        let path = seed_dir(run_dir, seed).join("metrics").join("similarity.json");
        if !path.is_file() {
            continue;
        }
        let entries: Vec<SimilarityEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for entry in entries {
            for row in &entry.report.rows {
                rows.push(vec![
                    entry.method.clone(),
                    seed.to_string(),
                    entry.other.clone(),
                    fmt(entry.ratio),
                    fmt(row.eps),
                    fmt(row.match_fraction),
                    fmt(row.match_std),
                    fmt(row.l2_diff),
                    fmt(row.l2_std),
                    row.draws.to_string(),
                ]);
            }
        }
    }
    write_csv(
        &report_dir.join("similarity.csv"),
        &[
            "method", "seed", "other", "ratio", "eps", "match_mean", "match_std", "l2_mean",
            "l2_std", "draws",
        ],
        &rows,
    )
}

fn merge_heatmaps(
    config: &ExperimentConfig,
    run_dir: &Path,
    seeds: &[u64],
    report_dir: &Path,
) -> Result<(), RunError> {
    let _ = config;
    let mut rows = Vec::new();
    for &seed in seeds {
        let path = seed_dir(run_dir, seed).join("metrics").join("heatmap.json");
        if !path.is_file() {
            continue;
        }
        let cells: Vec<HeatmapCell> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for cell in cells {
            rows.push(vec![
                seed.to_string(),
                cell.source,
                cell.eval,
                fmt(cell.ratio),
                fmt(cell.sparsity),
                cell.inputs.to_string(),
                fmt(cell.mean_true_confidence),
                fmt(cell.mean_predicted_confidence),
            ]);
        }
    }
    write_csv(
        &report_dir.join("heatmap.csv"),
        &[
            "seed",
            "source",
            "eval",
            "ratio",
            "sparsity",
            "inputs",
            "mean_true_confidence",
            "mean_predicted_confidence",
        ],
        &rows,
    )
}
