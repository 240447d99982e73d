use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::{AnalyzeArgs, Ctx, SimulateArgs, Verdict, VerifyArgs};
use config::RunConfig;

const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Parser)]
#[command(name = "exclusion", version, about = "Simulate and verify competitive exclusion in trait space")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (for `build`, a `.json` path is taken as the file).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a built-in scenario as a scenario file.
    Build {
        #[arg(long)]
        name: String,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Integrate a scenario and write the trajectory CSV.
    Simulate {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        /// Times at which to write the population as a measure file.
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<f64>,
        /// Integrate every weight as its own ODE component.
        #[arg(long)]
        direct: bool,
    },
    /// Long-time prediction for a scenario.
    Predict {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Estimators on a trajectory (simulated unless `--trajectory` is given).
    Analyze {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Simulate and check against the prediction; exit 1 on a failed clause.
    Verify {
        /// Repeat to verify several scenarios concurrently.
        #[arg(long)]
        scenario: Vec<String>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Distances between two measure files.
    Metric {
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        /// JSON list of points; adds bounds on the distance from `mu` to measures on that set.
        #[arg(long)]
        set: Option<PathBuf>,
        /// Also solve the exact set-distance problem (small supports only).
        #[arg(long)]
        exact: bool,
    },
}

fn run(cli: Cli) -> Result<Verdict> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    let (cfg, base) = RunConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        cfg,
        base,
        out: cli.out,
        seed: cli.seed,
    };
    match cli.cmd {
        Cmd::Build { name, grid } => commands::build(&ctx, &name, grid)?,
        Cmd::Simulate {
            scenario,
            grid,
            t_end,
            samples,
            snapshots,
            direct,
        } => commands::simulate_cmd(
            &ctx,
            &SimulateArgs {
                scenario: scenario.as_deref(),
                grid,
                t_end,
                samples,
                snapshots,
                direct,
            },
        )?,
        Cmd::Predict { scenario, grid } => commands::predict_cmd(&ctx, scenario.as_deref(), grid)?,
        Cmd::Analyze {
            scenario,
            grid,
            trajectory,
            t_end,
            samples,
        } => commands::analyze_cmd(
            &ctx,
            &AnalyzeArgs {
                scenario: scenario.as_deref(),
                grid,
                trajectory: trajectory.as_deref(),
                t_end,
                samples,
            },
        )?,
        Cmd::Verify {
            scenario,
            grid,
            t_end,
            samples,
        } => {
            return commands::verify_cmd(
                &ctx,
                &VerifyArgs {
                    scenarios: scenario,
                    grid,
                    t_end,
                    samples,
                },
            )
        }
        Cmd::Metric { mu, nu, set, exact } => commands::metric_cmd(&ctx, &mu, &nu, set.as_deref(), exact)?,
    }
    Ok(Verdict::Pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Ok(Verdict::Error) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
