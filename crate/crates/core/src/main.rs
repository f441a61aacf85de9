use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mllab::bench::{emit_curves, emit_report, parse_config, run_grid, ReportFormat};
use mllab::gradcheck::run_gradcheck;
use mllab::loss::LossKind;
use mllab::Error;

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "mllab", version, about = "Margin-loss laboratory: training grids, reports and gradient checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every run described by an experiment file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Maximum number of runs trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output root; takes precedence over $MLLAB_OUT and the file's `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise completed runs as a results table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Write a per-epoch curve file into every run directory.
    Curves {
        #[arg(long)]
        runs: PathBuf,
    },
    /// Randomised finite-difference check of one loss.
    Gradcheck {
        #[arg(long)]
        loss: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUN_FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, jobs, out } => {
            let configs = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if jobs == 0 {
                eprintln!("error: --jobs must be at least 1");
                return ExitCode::from(EXIT_CONFIG);
            }
            let mut failed = 0;
            for result in run_grid(&configs, out.as_deref(), jobs) {
                match result {
                    Ok(o) => {
                        let mean = o.report.window_mean.map_or("n/a".into(), |m| format!("{m:.2}"));
                        println!(
                            "{}  best {:.2}% at epoch {}  window mean {}  -> {}",
                            o.run_id,
                            o.report.best_acc,
                            o.report.best_epoch,
                            mean,
                            o.dir.display()
                        );
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        failed += 1;
                    }
                }
            }
            if failed > 0 {
                eprintln!("{failed} of {} runs failed", configs.len());
                return ExitCode::from(EXIT_RUN_FAILURE);
            }
            ExitCode::SUCCESS
        }
        Command::Report { runs, format } => {
            let result = format.parse::<ReportFormat>().and_then(|f| emit_report(&runs, f));
            match result {
                Ok((_, text)) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Curves { runs } => match emit_curves(&runs) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Gradcheck { loss, trials, seed } => {
            let summary = loss.parse::<LossKind>().and_then(|k| run_gradcheck(k, trials, seed));
            match summary {
                Ok(s) => {
                    let verdict = if s.passed() { "PASS" } else { "FAIL" };
                    println!(
                        "{verdict} {}: {} trials, {} coordinates, {} failures, max rel error {:.3e} (tol {:.0e})",
                        s.kind.label(),
                        s.trials,
                        s.coordinates,
                        s.failures,
                        s.max_rel_error,
                        s.rel_tol
                    );
                    if s.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_RUN_FAILURE) }
                }
                Err(e) => fail(&e),
            }
        }
    }
}
