mod config;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use prefbo_core::experiment::run_experiment;
use prefbo_core::gram::greedy_max_info_gain;
use prefbo_core::mrlpf::build_schedule;
use prefbo_core::{ActionKernel, ActionSet, KernelFamily, KernelSpec, RoundSchedule};
use prefbo_service::{Limits, ServiceConfig};

use config::RunSettings;

#[derive(Parser)]
#[command(
    name = "prefbo",
    version,
    about = "Preference-based optimization from pairwise feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run a batch of simulated experiments and write per-run traces.
    Run {
        /// Flat TOML file with the same keys as the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        settings: RunSettings,
    },
    /// Print the round lengths for a horizon.
    Schedule {
        #[arg(long = "T", value_parser = clap::value_parser!(u64).range(2..))]
        horizon: u64,
    },
    /// Greedy estimate of the maximum information gain on a 1-d grid.
    Infogain {
        #[arg(long, default_value = "se")]
        kernel: String,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long, default_value_t = 0.05)]
        lambda: f64,
        #[arg(long, default_value_t = 0.1)]
        lengthscale: f64,
    },
    /// Serve interactive sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Event log used to persist and recover sessions.
        #[arg(long)]
        journal: Option<PathBuf>,
        #[arg(long, default_value_t = Limits::default().max_actions)]
        max_actions: usize,
        #[arg(long, default_value_t = Limits::default().max_horizon)]
        max_horizon: usize,
    },
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn run(config: Option<PathBuf>, flags: RunSettings) -> Result<()> {
    let settings = match config {
        Some(path) => flags.over(RunSettings::load(&path)?),
        None => flags,
    };
    let experiment = settings.to_experiment()?;
    let out = settings.out_dir();
    let output = run_experiment(&experiment, &out).context("experiment failed")?;
    let s = &output.summary;
    println!(
        "{} T={} runs={}: final average regret {:.6} ± {:.6}",
        s.algorithm.name(),
        experiment.horizon,
        s.n_runs,
        s.final_mean(),
        s.final_std_err()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn schedule(horizon: usize) -> Result<()> {
    let s = build_schedule(horizon)?;
    println!("N_r: {}", join(&s.sizes));
    println!("t_r: {}", join(&s.boundaries()));
    println!("R: {}", s.num_rounds());
    if horizon >= 4 {
        println!("bound: {}", RoundSchedule::round_bound(horizon));
    }
    Ok(())
}

fn infogain(
    kernel: &str,
    grid: usize,
    horizon: usize,
    lambda: f64,
    lengthscale: f64,
) -> Result<()> {
    let family = KernelFamily::parse(kernel)?;
    let spec = KernelSpec::unit(family, lengthscale, 1)?;
    let kernel = Arc::new(ActionKernel::new(
        spec,
        ActionSet::grid_1d(0.0, 1.0, grid)?,
    )?);
    let gamma = greedy_max_info_gain(&kernel, horizon, lambda)?;
    println!("{gamma:.6}");
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, settings } => run(config, settings),
        Command::Schedule { horizon } => schedule(horizon as usize),
        Command::Infogain {
            kernel,
            grid,
            horizon,
            lambda,
            lengthscale,
        } => infogain(&kernel, grid, horizon, lambda, lengthscale),
        Command::Serve {
            addr,
            journal,
            max_actions,
            max_horizon,
        } => {
            let config = ServiceConfig {
                addr,
                limits: Limits {
                    max_actions,
                    max_horizon,
                },
                journal,
            };
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {addr}");
            rt.block_on(prefbo_service::serve(config))
                .context("server failed")
        }
    }
}
