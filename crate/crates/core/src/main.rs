use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crb_loc::cli::{self, CliError, CliResult};
use crb_loc::CoeffMode;

/// Cramér-Rao bounds and ML Monte Carlo sweeps for range-based localization
/// with randomly biased ranges.
#[derive(Parser)]
#[command(name = "crb-loc", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list every violated invariant.
    Validate { scenario: PathBuf },
    /// Compute one CRB and write coefficients, CRB entries and MSE bound.
    Bound {
        scenario: PathBuf,
        #[arg(long, default_value = "numeric", value_parser = parse_mode)]
        mode: CoeffMode,
        /// Replace the bias priors with the measured histogram of this bin width.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bound sweep over the histogram bin width.
    Sweep {
        scenario: PathBuf,
        /// `start:step:end` or a comma separated list (default 0.1:0.1:1.0).
        #[arg(long, value_parser = parse_deltas)]
        deltas: Option<Deltas>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo MSE of both ML estimators next to the bounds.
    #[command(name = "ml-mse")]
    MlMse {
        scenario: PathBuf,
        #[arg(long, value_parser = parse_deltas)]
        deltas: Option<Deltas>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone)]
struct Deltas(Vec<f64>);

fn parse_deltas(s: &str) -> Result<Deltas, String> {
    cli::parse_deltas(s).map(Deltas).map_err(|e| e.message)
}

fn parse_mode(s: &str) -> Result<CoeffMode, String> {
    s.parse().map_err(|e: crb_loc::Error| e.to_string())
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError {
            code: "io",
            message: format!("{}: {e}", p.display()),
            exit: 1,
        }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError {
                code: "io",
                message: e.to_string(),
                exit: 1,
            }),
    }
}

fn rows_status(ok: bool) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError {
            code: "sweep-rows",
            message: "one or more sweep rows are invalid, see the status column".into(),
            exit: 1,
        })
    }
}

fn run(args: Args) -> CliResult<()> {
    match args.command {
        Command::Validate { scenario } => cli::cmd_validate(&scenario, &mut std::io::stdout()),
        Command::Bound {
            scenario,
            mode,
            delta,
            out,
        } => {
            let (csv, mse) = cli::cmd_bound(&scenario, mode, delta)?;
            emit(&csv, out.as_deref())?;
            println!("mse_bound={}", cli::fmt_num(mse));
            Ok(())
        }
        Command::Sweep {
            scenario,
            deltas,
            out,
        } => {
            let (csv, ok) = cli::cmd_sweep(&scenario, deltas.as_ref().map(|d| d.0.as_slice()))?;
            emit(&csv, out.as_deref())?;
            rows_status(ok)
        }
        Command::MlMse {
            scenario,
            deltas,
            trials,
            seed,
            out,
        } => {
            let (csv, ok) = cli::cmd_mlmse(
                &scenario,
                deltas.as_ref().map(|d| d.0.as_slice()),
                trials,
                seed,
            )?;
            emit(&csv, out.as_deref())?;
            rows_status(ok)
        }
    }
}

fn main() -> ExitCode {
    let threads = std::env::var("CRB_LOC_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if threads > 0 {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit)
        }
    }
}
