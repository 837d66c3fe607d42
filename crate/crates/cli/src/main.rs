#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ertte::config::Config;

#[derive(Parser, Debug)]
#[command(
    name = "ertte",
    version,
    about = "En-route travel time estimation with a learned re-prediction gate"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration file; defaults are used for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set agent.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Root of all stage directories.
    #[arg(long, env = "ERTTE_RUN_ROOT", default_value = "runs", global = true)]
    pub run_root: PathBuf,
    /// Shorthand for `--set train.seed=… --set data.seed=…`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Learned,
    Always,
    NeverAfterFirst,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic grid world and its trips.
    SynthGen,
    /// Build the historical traffic store from the training split.
    BuildTraffic,
    /// Train the expert predictor used for difficulty scoring.
    TrainExpert,
    /// Score every training sample with the expert and partition the grid.
    ScoreDifficulty,
    /// Train the travel time predictor.
    TrainPredictor {
        #[arg(long, value_enum)]
        curriculum: Option<Switch>,
    },
    /// Train the re-prediction agent against the frozen predictor.
    TrainAgent {
        /// Continue from the last saved epoch.
        #[arg(long)]
        resume: bool,
    },
    /// Simulate online requests on the test split.
    Evaluate {
        #[arg(long)]
        interval: Option<f64>,
        #[arg(long, value_enum, default_value = "learned")]
        policy: PolicyArg,
    },
    /// Evaluate over several request intervals.
    SweepInterval {
        #[arg(long, value_enum, default_value = "learned")]
        policy: PolicyArg,
    },
    /// Retrain the predictor on growing fractions of the training data.
    Scalability,
    /// Random and worst-route exports from an event stream.
    ExportCaseStudy {
        /// Event stream; defaults to the last `evaluate` output.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthGen => "synth-gen",
            Command::BuildTraffic => "build-traffic",
            Command::TrainExpert => "train-expert",
            Command::ScoreDifficulty => "score-difficulty",
            Command::TrainPredictor { .. } => "train-predictor",
            Command::TrainAgent { .. } => "train-agent",
            Command::Evaluate { .. } => "evaluate",
            Command::SweepInterval { .. } => "sweep-interval",
            Command::Scalability => "scalability",
            Command::ExportCaseStudy { .. } => "export-case-study",
        }
    }
}

fn resolve_config(common: &Common) -> ertte::Result<(Config, Vec<String>)> {
    let base = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut overrides = Vec::new();
    if let Some(seed) = common.seed {
        overrides.push(format!("data.seed={seed}"));
        overrides.push(format!("train.seed={seed}"));
        overrides.push(format!("eval.seed={seed}"));
    }
    overrides.extend(common.overrides.iter().cloned());
    let cfg = base.with_overrides(&overrides)?;
    cfg.validate()?;
    Ok((cfg, overrides))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = resolve_config(&cli.common).and_then(|(cfg, overrides)| {
        let ctx = stages::Stage::new(&cli.common, cfg, overrides, cli.command.name());
        stages::run(&ctx, &cli.command)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
