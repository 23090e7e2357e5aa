use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curloop::Result;
use curloop_cli::config::{preset, ExperimentConfig};
use curloop_cli::harness::{cmd_sensitivity, cmd_simulate, cmd_sweep, output_dir, write_json};
use curloop_cli::verify::cmd_verify;
use curloop_cli::{exit_code, EXIT_ACCEPTANCE};

#[derive(Parser)]
#[command(name = "curloop", version, about = "Two-model self-consuming training loops with human curation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: gaussian-ref, text-image or decoupled.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the retraining loop; writes trajectory.csv and summary.json.
    Simulate(Common),
    /// Sensitivity report; writes sensitivity.json and CSV tables.
    Sensitivity(Common),
    /// Monte Carlo sweep over (t, lambda, n); writes sweep.csv.
    Sweep(Common),
    /// Run a built-in verification suite: text-image, gaussian-ref or kappa-tau.
    Verify {
        #[arg(long, value_name = "NAME")]
        preset: String,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(curloop::Error::Invalid("give --config PATH or --preset NAME".into())),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.workers.is_some() {
        cfg.workers = c.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load(&c)?;
            let s = cmd_simulate(&cfg, &output_dir(c.out.as_deref(), &cfg))?;
            println!(
                "converged={} at={:?} rate={:?} error={:?}",
                s.converged, s.converged_at, s.measured_rate, s.estimate_error
            );
        }
        Command::Sensitivity(c) => {
            let cfg = load(&c)?;
            let s = cmd_sensitivity(&cfg, &output_dir(c.out.as_deref(), &cfg))?;
            println!(
                "rho_p={:?} inner_product={} threshold={:?} decisive={:?} dJp_dlambda={} dJq_dlambda={}",
                s.summary.rho_p,
                s.summary.inner_product,
                s.summary.threshold,
                s.summary.decisive,
                s.report.djp_dlambda,
                s.report.djq_dlambda
            );
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            let rows = cmd_sweep(&cfg, &output_dir(c.out.as_deref(), &cfg))?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} rows, {failed} with errors", rows.len());
        }
        Command::Verify { preset, out } => {
            let report = cmd_verify(&preset)?;
            for c in &report.checks {
                println!("{} {} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_json(&dir.join("verify.json"), &report)?;
            }
            if !report.passed {
                return Ok(EXIT_ACCEPTANCE);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
