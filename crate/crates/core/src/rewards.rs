//! Rule-based trajectory rewards.
//!
//! The accuracy reward pays `1 + alpha * k` for a correct final answer,
//! `alpha * k` for a wrong one and nothing when no answer was given, where `k`
//! is the key-step match score. The validity reward pays 1 when the trajectory
//! is complete (background, at least one step, answer) and ordered (background
//! before every step, answer after every step). The total is their sum.

use serde::{Deserialize, Serialize};

use crate::keystep::match_key_steps;
use crate::normalize::normalize_expression;
use crate::trajectory::{extract_answer, ParsedTrajectory, Question, Trajectory};

pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// Accuracy with key-step credit plus structural validity.
    #[default]
    #[serde(rename = "stepwise")]
    StepWise,
    /// Final-answer correctness only: 1 or 0.
    #[serde(rename = "outcome")]
    OutcomeOnly,
}

impl std::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardMode::StepWise => "stepwise",
            RewardMode::OutcomeOnly => "outcome",
        })
    }
}

impl std::str::FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stepwise" => Ok(RewardMode::StepWise),
            "outcome" => Ok(RewardMode::OutcomeOnly),
            other => Err(format!("unknown reward mode {other:?} (expected stepwise or outcome)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub mode: RewardMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            mode: RewardMode::StepWise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerStatus {
    Correct,
    Wrong,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_auc: f64,
    pub r_val: f64,
    pub k: f64,
    pub total: f64,
    pub answer_status: AnswerStatus,
    pub completeness_ok: bool,
    pub logic_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReward {
    pub r_auc: f64,
    pub k: f64,
    pub answer_status: AnswerStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReward {
    pub r_val: f64,
    pub completeness_ok: bool,
    pub logic_ok: bool,
}

pub fn answer_status(parsed: &ParsedTrajectory, gold_answer: &str) -> AnswerStatus {
    match extract_answer(parsed) {
        None => AnswerStatus::Null,
        Some(ans) if normalize_expression(ans) == normalize_expression(gold_answer) => AnswerStatus::Correct,
        Some(_) => AnswerStatus::Wrong,
    }
}

/// Accuracy reward with key-step credit. In outcome-only mode `k` is forced
/// to 0, so the reward is 1 for a correct answer and 0 otherwise.
pub fn step_rar(traj: &Trajectory, question: &Question, cfg: &RewardConfig) -> AccuracyReward {
    let k = match cfg.mode {
        RewardMode::StepWise => match_key_steps(&traj.raw_text, &question.key_steps).match_score,
        RewardMode::OutcomeOnly => 0.0,
    };
    let status = answer_status(&traj.parsed, &question.gold_answer);
    let r_auc = match status {
        AnswerStatus::Correct => 1.0 + cfg.alpha * k,
        AnswerStatus::Wrong => cfg.alpha * k,
        // no answer forfeits key-step credit too
        AnswerStatus::Null => 0.0,
    };
    AccuracyReward {
        r_auc,
        k,
        answer_status: status,
    }
}

/// Validity reward: 1 iff the trajectory is complete and ordered.
pub fn step_rvr(traj: &Trajectory) -> ValidityReward {
    let p = &traj.parsed;
    let completeness_ok = p.background_span.is_some() && !p.step_spans.is_empty() && p.answer_span.is_some();
    let logic_ok = match (p.background_span, p.answer_span) {
        (Some(bg), Some(ans)) => p.step_spans.iter().all(|s| bg.start < s.start && ans.start > s.start),
        _ => false,
    };
    ValidityReward {
        r_val: if completeness_ok && logic_ok { 1.0 } else { 0.0 },
        completeness_ok,
        logic_ok,
    }
}

pub fn total_reward(traj: &Trajectory, question: &Question, cfg: &RewardConfig) -> RewardBreakdown {
    let acc = step_rar(traj, question, cfg);
    let val = step_rvr(traj);
    let r_val = match cfg.mode {
        RewardMode::StepWise => val.r_val,
        RewardMode::OutcomeOnly => 0.0,
    };
    RewardBreakdown {
        r_auc: acc.r_auc,
        r_val,
        k: acc.k,
        total: acc.r_auc + r_val,
        answer_status: acc.answer_status,
        completeness_ok: val.completeness_ok,
        logic_ok: val.logic_ok,
    }
}
