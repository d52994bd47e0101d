mod commands;
mod config;
mod error;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{PolicyKind, Run};
use crate::error::CliResult;

/// Progress-reward pipeline: demos, reward pretraining, online RL, RWR and
/// evaluation on toy goal-reaching tasks.
#[derive(Parser, Debug)]
#[command(name = "progress", version, about)]
struct Cli {
    /// Run-config file (TOML). Defaults apply when absent. Every key can be
    /// overridden with `PROGRESS_<SECTION>__<KEY>` (or `PROGRESS_SEED`).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record scripted demonstrations.
    GenDemos {
        /// Mixed-quality set (half deliberately failed) instead of experts.
        #[arg(long)]
        noisy: bool,
        #[arg(long)]
        count: Option<usize>,
        /// Output file; defaults to the configured dataset path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain the progress model on expert demos.
    Pretrain,
    /// Online Q-learning on the learned reward with periodic refinement.
    TrainOnline {
        /// Skip push-back updates on rollouts.
        #[arg(long)]
        no_pushback: bool,
        /// Push-back decay, overriding `reward.beta`.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        parallel_envs: Option<usize>,
    },
    /// Reward-weighted behavior cloning on the noisy demos.
    TrainRwr {
        /// Weight temperature, overriding `reward.omega`; 0 is plain BC.
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Roll out a policy and write one CSV row per episode.
    Eval {
        #[arg(long, value_enum, default_value_t)]
        policy: PolicyKind,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Aggregate per-seed metric files into mean and std columns.
    ExportPlots {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Step-bin width.
        #[arg(long, default_value_t = 1000)]
        bin_width: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenDemos { .. } => "gen-demos",
            Command::Pretrain => "pretrain",
            Command::TrainOnline { .. } => "train-online",
            Command::TrainRwr { .. } => "train-rwr",
            Command::Eval { .. } => "eval",
            Command::ExportPlots { .. } => "export-plots",
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Command::ExportPlots {
        files,
        out_dir,
        bin_width,
    } = &cli.command
    {
        return commands::export_plots(files, out_dir, *bin_width);
    }
    let mut loaded = config::load(cli.config.as_deref())?;
    let settings = &mut loaded.config;
    match &cli.command {
        Command::TrainOnline {
            no_pushback,
            beta,
            parallel_envs,
        } => {
            if *no_pushback {
                settings.online.pushback = false;
            }
            if let Some(beta) = beta {
                settings.reward.beta = *beta;
            }
            if let Some(k) = parallel_envs {
                settings.online.parallel_envs = *k;
            }
        }
        Command::TrainRwr { omega: Some(omega) } => settings.reward.omega = *omega,
        _ => {}
    }
    settings.validate()?;
    let run = Run {
        loaded,
        command: cli.command.name(),
        arguments: std::env::args().skip(1).collect(),
    };
    match cli.command {
        Command::GenDemos { noisy, count, out } => commands::gen_demos(&run, noisy, count, out),
        Command::Pretrain => commands::pretrain(&run),
        Command::TrainOnline { .. } => commands::train_online(&run),
        Command::TrainRwr { .. } => commands::train_rwr_cmd(&run),
        Command::Eval { policy, episodes } => commands::eval(&run, policy, episodes),
        Command::ExportPlots { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code())
        }
    }
}
