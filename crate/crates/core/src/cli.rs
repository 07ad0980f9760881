//! Command-line front end: `simulate`, `sweep` and `verify`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{load_config, ResolvedConfig};
use crate::harness::{run_monte_carlo, run_observer, sweep_rows, write_bias_std_csv, write_sweep_csv};
use crate::output::{fmt_f64, write_csv};
use crate::scenario::simulate_truth;
use crate::verify::{run_verify, Fault, VerifyOptions, REFERENCE_TRIALS};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "doblab", version, about = "Kalman-filter disturbance observer laboratory")]
pub struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trajectory and run every configured estimator on it.
    Simulate { config: PathBuf },
    /// Monte Carlo eta sweep of KF-DOB alongside the configured estimators.
    Sweep { config: PathBuf },
    /// Run the built-in property suite.
    Verify {
        /// Monte Carlo trials for the statistical checks.
        #[arg(long, default_value_t = REFERENCE_TRIALS as u64, value_parser = clap::value_parser!(u64).range(2..))]
        trials: u64,
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    /// Drop the measurement-noise term of the Joseph update.
    SkipJoseph,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn load(path: &Path) -> Result<ResolvedConfig, Failure> {
    load_config(path).map_err(|e| Failure::Config(e.to_string()))
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn simulate(path: &Path) -> Result<(), Failure> {
    let cfg = load(path)?;
    let dir = cfg.output_dir().to_path_buf();
    prepare_dir(&dir)?;
    let traj = simulate_truth(&cfg.truth, &cfg.profile, cfg.steps(), cfg.seed(), cfg.dt()).map_err(runtime("simulation"))?;
    let traj_path = dir.join("trajectory.csv");
    let file = fs::File::create(&traj_path).map_err(runtime("trajectory.csv"))?;
    traj.write_csv(BufWriter::new(file)).map_err(runtime("trajectory.csv"))?;
    println!("wrote {}", traj_path.display());

    for est in &cfg.estimators {
        let run = run_observer(&est.kind, &cfg.truth.system, &cfg.truth.x0, &traj).map_err(runtime(&est.name))?;
        let rows = run.estimates.iter().enumerate().map(|(i, e)| {
            let step = i + 1;
            vec![
                step.to_string(),
                fmt_f64(step as f64 * cfg.dt()),
                fmt_f64(e.d_hat[0]),
                fmt_f64(e.d_cov[(0, 0)]),
                fmt_f64(e.x_hat[0]),
                fmt_f64(e.x_hat[1]),
            ]
        });
        let out = dir.join(format!("estimates_{}.csv", est.name));
        write_csv(&out, "step,t,d_hat,d_cov,x1_hat,x2_hat", rows).map_err(runtime(&est.name))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn sweep(path: &Path, threads: Option<usize>) -> Result<(), Failure> {
    let cfg = load(path)?;
    let dir = cfg.output_dir().to_path_buf();
    prepare_dir(&dir)?;
    let report = run_monte_carlo(&cfg.sweep_config(threads)).map_err(runtime("Monte Carlo"))?;
    let rows = sweep_rows(&report, &cfg.eta_grid);
    write_sweep_csv(&rows, &dir.join("sweep.csv")).map_err(runtime("sweep.csv"))?;
    for est in &report.estimators {
        let name = format!("bias_std_{}.csv", est.name);
        write_bias_std_csv(est, report.dt, &dir.join(&name)).map_err(runtime(&name))?;
    }
    report.write_json(&dir.join("report.json")).map_err(runtime("report.json"))?;

    println!("{:<20} {:>12} {:>12} {:>12} {:>8}", "estimator", "bias^2", "variance", "perf_loss", "failed");
    for est in &report.estimators {
        println!(
            "{:<20} {:>12.5} {:>12.5} {:>12.5} {:>8}",
            est.name, est.mean_bias_sq, est.mean_var, est.perf_loss, est.failures
        );
    }
    let failed: usize = report.estimators.iter().map(|e| e.failures).sum();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} estimator runs failed")));
    }
    Ok(())
}

fn verify(trials: usize, fault: Option<FaultArg>, threads: Option<usize>) -> Result<(), Failure> {
    let opts = VerifyOptions {
        trials,
        fault: fault.map(|FaultArg::SkipJoseph| Fault::SkipJoseph),
        threads,
    };
    let results = run_verify(&opts).map_err(runtime("verify"))?;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("all {} properties hold", results.len());
        Ok(())
    } else {
        Err(Failure::Runtime(format!("failed properties: {}", failed.join("; "))))
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let threads = cli.threads.map(|t| t as usize);
    let outcome = match &cli.command {
        Command::Simulate { config } => simulate(config),
        Command::Sweep { config } => sweep(config, threads),
        Command::Verify { trials, inject_fault } => verify(*trials as usize, *inject_fault, threads),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}
