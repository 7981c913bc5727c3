//! Command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use prunelab::data::{make_synthetic, Corruption, CorruptionKind, Split};
use prunelab::eval::element_error;
use prunelab::net::MaskedNetwork;
use prunelab::prune::{train, TrainContext};
use prunelab::runner::{report, run, ExperimentConfig};
use prunelab::tensor::fdcheck;

#[derive(Parser)]
#[command(name = "prunelab", version, about = "Prune-retrain experiments and their evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config; completed (config, seed) pairs are
    /// skipped on re-runs.
    Run {
        config: PathBuf,
        /// Parallel seed jobs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Replace the config's seed list with a single seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Regenerate the CSV/JSON tables for a finished run directory.
    Report { dir: PathBuf },
    /// Check every op's analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an unpruned reference net and print the severity ladder stats
    /// (input distortion and error) for every corruption kind.
    CalibrateCorruptions { config: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { config, workers, seed_override } => {
            let mut config = ExperimentConfig::from_path(&config).map_err(|e| e.to_string())?;
            if let Some(seed) = seed_override {
                config.seeds = vec![seed];
            }
            let summary = run(&config, workers).map_err(|e| e.to_string())?;
            println!(
                "run {}: {} completed, {} skipped, {} failed -> {}",
                config.name,
                summary.completed,
                summary.skipped,
                summary.failed.len(),
                summary.run_dir.display()
            );
            for (seed, message) in &summary.failed {
                eprintln!("seed {seed} failed: {message}");
            }
            Ok(if summary.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report { dir } => {
            let paths = report(&dir).map_err(|e| e.to_string())?;
            println!("report written to {}", paths.report_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { rounds, seed } => {
            let started = std::time::Instant::now();
            let suite = fdcheck::run_suite(rounds, seed);
            for failure in &suite.failures {
                eprintln!("FAIL {failure}");
            }
            println!(
                "gradcheck: {} cases, max relative error {:.3e} (tolerance {:.0e}), {:.2}s: {}",
                suite.cases,
                suite.max_rel_err,
                suite.tolerance,
                started.elapsed().as_secs_f64(),
                if suite.passed() { "PASS" } else { "FAIL" }
            );
            Ok(if suite.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::CalibrateCorruptions { config } => {
            let config = ExperimentConfig::from_path(&config).map_err(|e| e.to_string())?;
            calibrate(&config).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Severity ladder stats: mean input distortion and reference-net error per
/// `(kind, severity)`, next to the clean error, as CSV on stdout.
fn calibrate(config: &ExperimentConfig) -> Result<(), prunelab::runner::RunError> {
    let base = Arc::new(make_synthetic(&config.dataset)?);
    let seed = config.seeds[0];
    let mut net = MaskedNetwork::init(&config.network, seed)?;
    let ctx = TrainContext { data: &base, augment: &[], seed, cycle: 0 };
    train(&mut net, config.schedule.n_train, &config.schedule.train, &ctx)?;

    let clean = element_error(&net, &base, None, Split::Test)?;
    println!("kind,severity,parameter,mean_l2_distortion,error,clean_error");
    let (inputs, _) = base.split_batch(Split::Test);
    let features = base.features();
    let rows = inputs.shape()[0];
    for kind in CorruptionKind::ALL {
        for severity in 1..=5 {
            let corruption = Corruption::new(kind, severity)?;
            let corrupted = match corruption.apply(&inputs, base.spec().seed, 0) {
                Ok(t) => t,
                Err(prunelab::data::DataError::UnsupportedCorruption { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            let mut distortion = 0.0;
            for i in 0..rows {
                let mut sq = 0.0;
                for f in 0..features {
                    let d = corrupted.data()[i * features + f] - inputs.data()[i * features + f];
                    sq += d * d;
                }
                distortion += sq.sqrt();
            }
            distortion /= rows as f64;
            let err = element_error(&net, &base, Some(&corruption), Split::Test)?;
            println!(
                "{},{},{},{},{},{}",
                kind.name(),
                severity,
                corruption.parameter(),
                distortion,
                err,
                clean
            );
        }
    }
    Ok(())
}
