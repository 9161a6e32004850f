//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 validation error (including failed
//! verification), 2 training divergence, 3 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roast_cli::config::ExperimentConfig;
use roast_cli::experiment::{self, Method};
use roast_cli::{checkpoint, report, verify, CliError};

#[derive(Parser)]
#[command(
    name = "roast",
    about = "Robust fine-tuning benchmark: adversarial training with selective gradient masking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method from a config file and write its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Method name; overrides the config's `method` field.
        #[arg(long)]
        method: Option<String>,
        /// Single training seed; overrides the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full method grid and write the report files.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo verification of the masked-estimator moment formulas.
    VerifyEstimator {
        /// Draws for the unbiasedness check.
        #[arg(long, default_value_t = 100_000)]
        mean_draws: usize,
        /// Draws for the variance check.
        #[arg(long, default_value_t = 1_000_000)]
        var_draws: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of model gradients.
    Gradcheck {
        /// Randomized instances per model kind.
        #[arg(long, default_value_t = 17)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Re-render report files from stored results.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train {
            config,
            method,
            seed,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.out = Some(o);
            }
            let method_name = method
                .or_else(|| cfg.method.clone())
                .ok_or_else(|| CliError::Validation("train needs --method or a config `method`".into()))?;
            let method = Method::parse(&method_name)?;
            let seed = cfg.seeds[0];
            let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("run-out"));

            let harness = experiment::Harness::prepare(&cfg)?;
            let (model, log, metrics, breakdown) = harness.run_one(method, seed)?;

            std::fs::create_dir_all(&out_dir)
                .map_err(|e| CliError::Io(format!("create {}: {e}", out_dir.display())))?;
            checkpoint::save_checkpoint(&model, seed, &out_dir.join("checkpoint.json"))?;
            let mut lines = String::new();
            for epoch in &log.epochs {
                let row = experiment::EpochRow::from(epoch);
                lines.push_str(&serde_json::to_string(&row).map_err(|e| CliError::Io(e.to_string()))?);
                lines.push('\n');
            }
            std::fs::write(out_dir.join("trainlog.jsonl"), lines)
                .map_err(|e| CliError::Io(e.to_string()))?;
            let run_json = serde_json::json!({
                "method": method.name(),
                "seed": seed,
                "metrics": experiment::MetricsRow::from(metrics),
                "per_split": breakdown,
            });
            std::fs::write(
                out_dir.join("run.json"),
                serde_json::to_string_pretty(&run_json).map_err(|e| CliError::Io(e.to_string()))?,
            )
            .map_err(|e| CliError::Io(e.to_string()))?;
            println!(
                "trained {} (seed {seed}): acc_in {:.2} acc_shift {:.2} acc_adv {:.2} ece {:.2} auroc {:.4}",
                method.name(),
                metrics.acc_in,
                metrics.acc_shift,
                metrics.acc_adv,
                metrics.ece,
                metrics.auroc
            );
            println!("artifacts in {}", out_dir.display());
            Ok(())
        }
        Command::Benchmark { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.out = Some(o);
            }
            let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("bench-out"));
            let outcome = experiment::run_experiment(&cfg)?;
            let report = report::write_report(&outcome, &out_dir)?;
            println!("{}", report::render_csv(&report));
            if !outcome.failures.is_empty() {
                eprintln!("{} run(s) diverged and were excluded", outcome.failures.len());
            }
            println!("report files in {}", out_dir.display());
            Ok(())
        }
        Command::VerifyEstimator {
            mean_draws,
            var_draws,
            seed,
            out,
        } => {
            let report = verify::run_estimator_verification(mean_draws, var_draws, seed)?;
            println!(
                "unbiasedness: {}/{} scenarios within 3 standard errors",
                report.unbiased_passes,
                report.scenarios.len()
            );
            println!(
                "variance:     {}/{} positive-variance scenarios within 5%",
                report.variance_passes, report.variance_checked
            );
            println!(
                "norm bound:   {}/{} scenarios under the Frobenius bound",
                report.bound_passes,
                report.scenarios.len()
            );
            if let Some(path) = out {
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?,
                )
                .map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))?;
                println!("report written to {}", path.display());
            }
            if report.all_ok {
                println!("estimator verification: PASS");
                Ok(())
            } else {
                Err(CliError::Validation("estimator verification failed".into()))
            }
        }
        Command::Gradcheck {
            instances,
            tolerance,
            seed,
        } => {
            let report = verify::run_gradcheck(instances, tolerance, seed)?;
            for i in &report.instances {
                println!(
                    "{:<16} {:<12} {:>5} scalars  max rel err {:.3e}",
                    i.kind, i.objective, i.scalars, i.max_rel_err
                );
            }
            println!(
                "gradcheck over {} instances: max rel err {:.3e} (tolerance {:.1e})",
                report.instances.len(),
                report.max_rel_err,
                report.tolerance
            );
            if report.ok {
                println!("gradcheck: PASS");
                Ok(())
            } else {
                Err(CliError::Validation("gradient check failed".into()))
            }
        }
        Command::Report { results, out } => {
            let outcome = report::read_results(&results)?;
            let report = report::write_report(&outcome, &out)?;
            println!("{}", report::render_csv(&report));
            println!("report files in {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
