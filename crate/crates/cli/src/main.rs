mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stepgrpo::RewardMode;

use crate::error::CliError;

/// Step-wise reasoning rewards and group-relative policy optimization.
#[derive(Debug, Parser)]
#[command(name = "stepgrpo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score reasoning trajectories against key steps and gold answers.
    Score(ScoreArgs),
    /// Warm up and train a toy policy; writes train_log.csv, policy.json and manifest.json.
    Train(TrainArgs),
    /// Train under two reward modes over several seeds and compare eval success curves.
    Compare(CompareArgs),
    /// Export a synthetic task corpus as JSONL.
    Tasks(TasksArgs),
    /// Re-run the command recorded in a manifest and check the output hashes.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Trajectory JSONL: {"question_id", "text"} per line.
    #[arg(long)]
    trajectories: PathBuf,
    /// Key-step JSONL: {"question_id", "key_steps": [{"canonical", "variants"?}]} per line.
    #[arg(long)]
    key_steps: PathBuf,
    /// Gold-answer JSONL: {"question_id", "gold_answer"} per line. A task corpus works too.
    #[arg(long)]
    answers: PathBuf,
    #[arg(long, default_value_t = stepgrpo::rewards::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value = "stepwise")]
    reward_mode: RewardMode,
    /// Write rewards.jsonl and manifest.json here instead of printing to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingFlags {
    /// TOML file with training settings; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reward_mode: Option<RewardMode>,
    /// Rollouts per question.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    #[arg(long, default_value = "stepgrpo-train")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    /// Comma-separated seeds; at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Reward mode to compare against (the other side is --reward-mode, default stepwise).
    #[arg(long, default_value = "outcome")]
    against: RewardMode,
    #[arg(long, default_value = "stepgrpo-compare")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TasksArgs {
    #[arg(long, default_value_t = 2)]
    difficulty: u8,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write tasks.jsonl and manifest.json here instead of printing to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// A manifest.json written by score, train, compare or tasks.
    manifest: PathBuf,
    /// Directory for the re-run's outputs.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(a) => commands::score(
            commands::ScoreOptions {
                trajectories: a.trajectories,
                key_steps: a.key_steps,
                answers: a.answers,
                alpha: a.alpha,
                reward_mode: a.reward_mode,
            },
            a.out.as_deref(),
        ),
        Command::Train(a) => commands::resolve_config(&a.flags).and_then(|cfg| commands::train(&cfg, &a.out)),
        Command::Compare(a) if a.flags.seed.is_some() => {
            Err(CliError::Usage("compare takes --seeds, not --seed".into()))
        }
        Command::Compare(a) => commands::resolve_config(&a.flags).and_then(|cfg| {
            let primary = cfg.reward_mode;
            commands::compare(
                &commands::CompareOptions {
                    config: cfg,
                    seeds: a.seeds,
                    primary,
                    baseline: a.against,
                },
                &a.out,
            )
        }),
        Command::Tasks(a) => commands::tasks(
            &commands::TasksOptions {
                difficulty: a.difficulty,
                count: a.count,
                seed: a.seed,
            },
            a.out.as_deref(),
        ),
        Command::Reproduce(a) => commands::reproduce(&a.manifest, &a.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
