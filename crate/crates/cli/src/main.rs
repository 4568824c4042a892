use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use spinfilter_cli::{run, ExperimentConfig, OutputFormat, Scenario};

#[derive(Parser)]
#[command(name = "spinfilter", version, about = "Double-pass spin magnetometer simulations")]
struct Cli {
    #[command(subcommand)]
    scenario: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cramér-Rao bound sweep over F
    QcrSweep(Common),
    /// Particle-filter sweep over F
    PfSweep(Common),
    /// Small-angle Kalman filter on simulated records
    Kalman(Common),
    /// Husimi Q-function of final filter states
    Qfunction(Common),
    /// Single filter trajectories
    Trajectory(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (falls back to SPINFILTER_WORKERS, then all cores)
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Extra overrides, e.g. --set K=0 --set F_list=10,20
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn build(cli: Cli) -> Result<ExperimentConfig> {
    let (scenario, args) = match cli.scenario {
        Command::QcrSweep(a) => (Scenario::QcrSweep, a),
        Command::PfSweep(a) => (Scenario::PfSweep, a),
        Command::Kalman(a) => (Scenario::Kalman, a),
        Command::Qfunction(a) => (Scenario::Qfunction, a),
        Command::Trajectory(a) => (Scenario::Trajectory, a),
    };
    let mut config = ExperimentConfig::new(scenario);
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        config.set(k.trim(), v)?;
    }
    config.scenario = scenario;
    if let Some(out) = args.out {
        config.output_path = out;
    }
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(w) = args.workers {
        config.workers = Some(w);
    }
    if let Some(f) = args.format {
        config.output_format = f.parse::<OutputFormat>().map_err(anyhow::Error::msg)?;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let result = build(Cli::parse()).and_then(|config| run(&config));
    match result {
        Ok(out) => {
            let s = &out.summary;
            if let Some(fit) = &s.fit {
                println!("fit exponent {:.4}, prefactor {:.4e}, residual {:.3e}", fit.exponent, fit.prefactor, fit.residual);
            }
            for d in &s.dropped {
                eprintln!("warning: F = {} dropped ({} failed): {}", d.spin.value(), d.n_failed, d.first_error);
            }
            for f in &s.failures {
                eprintln!("warning: F = {} trajectory {} (seed {}) failed: {}", f.f, f.trajectory, f.seed, f.error);
            }
            for p in &out.files {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
