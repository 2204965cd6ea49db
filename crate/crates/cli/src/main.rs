//! `frontlab` command-line runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frontlab::config::ExperimentConfig;
use frontlab::experiments::{run_simulate, run_sweep, run_verify, write_predictions};
use frontlab::Error;

#[derive(Parser)]
#[command(name = "frontlab", version, about = "Front propagation experiments for nonlocal monostable equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write trace.csv, fit.csv and snapshots/.
    Simulate(Common),
    /// Run the verification suites and write verification.csv.
    Verify(Common),
    /// Run every sweep family and write sweep.csv.
    Sweep(Common),
    /// Print predicted front positions as CSV.
    Predict(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `run.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (Command::Simulate(c) | Command::Verify(c) | Command::Sweep(c) | Command::Predict(c)) = &cli.command;
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let jobs = c.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    // Only the first configuration of the global pool takes effect.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    let out = cfg.output_dir(c.out.as_deref());
    match &cli.command {
        Command::Simulate(_) => {
            let r = run_simulate(&cfg, &out)?;
            for (level, fit) in &r.fits {
                match fit {
                    Ok(f) => println!("level {level}: {} (parameter {:.6})", f.law.name(), f.best().slope),
                    Err(e) => println!("level {level}: no fit ({e})"),
                }
            }
            println!("wrote {}", out.display());
        }
        Command::Verify(_) => {
            let rows = run_verify(&cfg, &out)?;
            for r in &rows {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                println!("{tag} {:<20} {:e} {} [{}]", r.suite, r.measured, r.tolerance, r.parameters);
            }
            println!("wrote {}", out.join("verification.csv").display());
            if rows.iter().any(|r| !r.passed) {
                return Err(Failure::Runtime("verification failed".into()));
            }
        }
        Command::Sweep(_) => {
            let rows = run_sweep(&cfg, &out, jobs)?;
            for r in &rows {
                println!(
                    "{:<20} predicted {:<17} measured {:<17} param {} rel.err {} {}",
                    r.family,
                    r.predicted_law.map_or("-", |l| l.name()),
                    r.measured_law.map_or("-", |l| l.name()),
                    fmt_opt(r.fitted_param),
                    fmt_opt(r.relative_error),
                    r.status
                );
            }
            println!("wrote {}", out.join("sweep.csv").display());
            if rows.iter().any(|r| r.failed()) {
                return Err(Failure::Runtime("some sweep rows failed".into()));
            }
        }
        Command::Predict(_) => {
            let stdout = std::io::stdout();
            write_predictions(&cfg, stdout.lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
