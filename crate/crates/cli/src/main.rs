//! Experiment CLI: run, sweep, compare, export, and self-check.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical abort,
//! 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graddrop::harness::{self, RunConfig};
use graddrop::mask::PolicyKind;
use graddrop::selfcheck;
use graddrop::Error;

#[derive(Parser)]
#[command(
    name = "graddrop",
    about = "Gradient-dropout fine-tuning experiments on a small transformer encoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run from a config file and write its metrics.
    Run {
        /// Run config (TOML); missing keys take defaults, unknown keys error.
        #[arg(long)]
        config: Option<PathBuf>,

        /// Output directory for metrics.jsonl, summary.json and checkpoint.
        #[arg(long)]
        out: PathBuf,

        /// Print the effective config (with defaults filled in) and exit.
        #[arg(long)]
        dry_run: bool,
    },

    /// Run a policy × seed sweep, one run directory per cell.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,

        /// Comma-separated policy kinds, e.g. "sft,grad-drop,epoch-toggle".
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,

        /// Comma-separated seed indices; each offsets every seed stream.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,

        #[arg(long)]
        out: PathBuf,

        /// Parallel workers (runs share nothing but the filesystem).
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },

    /// Paired t-tests of every policy in a sweep against a baseline.
    Compare {
        /// Sweep directory produced by `grid`.
        #[arg(long)]
        dir: PathBuf,

        #[arg(long, default_value = "sft")]
        baseline: String,

        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Rebuild the plot-ready timeline CSVs from a run directory.
    Export {
        /// Run directory holding metrics.jsonl.
        #[arg(long)]
        run: PathBuf,

        /// Destination directory; defaults to the run directory itself.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Run the built-in invariant and gradient self-tests.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::from_path(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_policies(names: &[String]) -> Result<Vec<PolicyKind>, Error> {
    names.iter().map(|n| PolicyKind::parse(n)).collect()
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Run { config, out, dry_run } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            if dry_run {
                print!("{}", cfg.to_toml_string());
                return Ok(ExitCode::SUCCESS);
            }
            let record = harness::run_experiment(&cfg, Some(&out))?;
            let s = &record.summary;
            println!(
                "{}: {} epochs, best accuracy {:.4} (epoch {}), final {:.4}, {:.1}s",
                s.policy, s.epochs_completed, s.best_accuracy, s.best_epoch, s.final_accuracy,
                s.wall_time_s
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Grid {
            config,
            policies,
            seeds,
            out,
            workers,
        } => {
            let cfg = load_config(&config)?;
            let kinds = parse_policies(&policies)?;
            let cells = harness::run_grid(&cfg, &kinds, &seeds, &out, workers)?;
            for c in &cells {
                println!(
                    "{}: final accuracy {:.4}, best {:.4} @ epoch {}",
                    c.dir.file_name().unwrap_or_default().to_string_lossy(),
                    c.summary.final_accuracy,
                    c.summary.best_accuracy,
                    c.summary.best_epoch
                );
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Compare { dir, baseline, out } => {
            let baseline = PolicyKind::parse(&baseline)?;
            let table = harness::compare_run_dirs(&dir, baseline)?;
            println!("treatment vs {baseline}: n, mean diff, t, p (two-sided)");
            for row in &table {
                let flag = if row.degenerate { "  [degenerate]" } else { "" };
                println!(
                    "{:>24}: n={} mean_diff={:+.4} t={:+.4} p={:.4}{flag}",
                    row.treatment.name(),
                    row.n_pairs,
                    row.mean_diff,
                    row.t,
                    row.p_value
                );
            }
            if let Some(path) = out {
                let text =
                    serde_json::to_string_pretty(&table).expect("comparison table serialises");
                std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Export { run, out } => {
            let epochs = harness::read_epochs(&run)?;
            if epochs.is_empty() {
                return Err(Error::Input(format!(
                    "{}: no completed epochs to export",
                    run.display()
                )));
            }
            let dest = out.unwrap_or_else(|| run.clone());
            harness::export_timeline(&epochs, &dest)?;
            println!(
                "wrote {} and {} for {} epochs",
                dest.join("timeline_layers.csv").display(),
                dest.join("timeline_metrics.csv").display(),
                epochs.len()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Check => {
            let outcomes = selfcheck::run_all();
            let mut failed = 0;
            for o in &outcomes {
                let tag = if o.passed { "PASS" } else { "FAIL" };
                println!("[{tag}] {}: {}", o.name, o.detail);
                if !o.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::Numeric(format!("{failed} self-checks failed")));
            }
            println!("all {} self-checks passed", outcomes.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}
