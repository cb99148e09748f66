//! Step-wise reasoning rewards and group-relative policy optimization.
//!
//! The crate is organised bottom-up:
//!
//! - [`trajectory`]: the marker-based reasoning text format and its parser.
//! - [`normalize`] and [`keystep`]: expression canonicalization, equivalent-format
//!   augmentation and soft key-step matching (the match score `k`).
//! - [`rewards`]: the accuracy reward (answer + `alpha * k`), the validity
//!   reward (completeness and ordering), and their sum.
//! - [`grpo`]: group-standardized advantages, the `x - ln x - 1` KL estimator and
//!   the sequence-level surrogate objective with its analytic gradient.
//! - [`policy`] and [`env`]: a slot-wise softmax policy and a synthetic arithmetic
//!   environment that renders trajectories in the marker format.
//! - [`trainer`]: supervised warm-up, the online optimization loop and evaluation.
//! - [`io`]: JSONL record schemas shared by the CLI.

pub mod env;
pub mod error;
pub mod grpo;
pub mod io;
pub mod keystep;
pub mod normalize;
pub mod policy;
pub mod rewards;
pub mod trainer;
pub mod trajectory;

pub use env::{generate_task, rollout, rollout_with, Decoding, Difficulty, SyntheticTask};
pub use error::{Error, Result};
pub use grpo::{group_advantages, kl_estimate, stepgrpo_objective, ObjectiveReport, RolloutGroup};
pub use keystep::{augment_variants, match_key_steps, KeyStep, KeyStepSet, MatchResult};
pub use normalize::normalize_expression;
pub use policy::{Action, ActionSpace, PolicyParams};
pub use rewards::{step_rar, step_rvr, total_reward, AnswerStatus, RewardBreakdown, RewardConfig, RewardMode};
pub use trainer::{
    evaluate, gold_dataset, nll, run, train_stepgrpo, warmup, EvalReport, RunOutput, TrainConfig, TrainLog, TrainLogRow,
};
pub use trajectory::{extract_answer, parse_trajectory, ParsedTrajectory, Question, Span, Trajectory};
