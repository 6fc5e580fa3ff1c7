use std::path::PathBuf;
use std::process::ExitCode;

use anticipate::experiment::{parse_seeds, Command, Experiment, ExperimentError, LoadOptions};
use anticipate::Execution;
use clap::{Parser, Subcommand};

/// Keypoint-subgoal experiments on a 2-D point world.
#[derive(Parser, Debug)]
#[command(name = "anticipate", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; beats the config's `output` and $ANTICIPATE_OUT.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed list, e.g. `0,1,2` or `0..5`.
    #[arg(long, global = true, value_name = "LIST", value_parser = seed_list)]
    seeds: Option<SeedList>,

    /// Dotted-path override, repeatable: `--override train.episodes=500`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Run everything on one thread. Artifacts are identical either way.
    #[arg(long, global = true)]
    sequential: bool,
}

// clap would read a bare `Vec<u64>` as a repeated flag.
#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

fn seed_list(text: &str) -> Result<SeedList, String> {
    parse_seeds(text).map(SeedList)
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Scripted demos on jittered copies of the world.
    GenDemos,
    /// Keypoints, keyframes and subgoals from the demos.
    BuildDataset,
    /// Fit the subgoal planner on the training split.
    TrainPlanner,
    /// Planner error on the held-out split.
    EvalPlanner,
    /// Tabular hierarchical Q-learning, one policy per seed.
    TrainPolicy,
    /// Greedy evaluation of every seed's policy.
    Evaluate,
    /// Train and evaluate under each reward shape.
    AblateReward,
    /// Rebuild the pipeline and retrain for each keypoint count.
    AblateKeypoints,
    /// Grid-oracle checks of the optimality lemma and the sub-optimality bound.
    VerifyTheory,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::GenDemos => Command::GenDemos,
            Cmd::BuildDataset => Command::BuildDataset,
            Cmd::TrainPlanner => Command::TrainPlanner,
            Cmd::EvalPlanner => Command::EvalPlanner,
            Cmd::TrainPolicy => Command::TrainPolicy,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::AblateReward => Command::AblateReward,
            Cmd::AblateKeypoints => Command::AblateKeypoints,
            Cmd::VerifyTheory => Command::VerifyTheory,
        }
    }
}

fn run(cli: &Cli, cmd: Command) -> Result<Vec<String>, ExperimentError> {
    let config = cli.config.as_ref().ok_or_else(|| ExperimentError::Config {
        field: "--config".into(),
        message: "a config file is required".into(),
    })?;
    let opts = LoadOptions {
        overrides: cli.overrides.clone(),
        seeds: cli.seeds.clone().map(|s| s.0),
        out: cli.out.clone(),
        execution: cli.sequential.then_some(Execution::Sequential),
    };
    let exp = Experiment::load(config, &opts)?;
    log::info!("{} -> {}", cmd.name(), exp.out.display());
    let outcome = exp.run(cmd)?;
    let mut lines = outcome.summary;
    for a in &outcome.artifacts {
        lines.push(format!("wrote {}", exp.path(&a.path).display()));
    }
    Ok(lines)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cmd = cli.command.command();
    match run(&cli, cmd) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record(cmd.name()));
            ExitCode::from(if e.kind() == "config" { 2 } else { 1 })
        }
    }
}
