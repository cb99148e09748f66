//! Supervised warm-up, the online group-relative optimization loop, and evaluation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{generate_task, rollout, rollout_with, Decoding, Difficulty, SyntheticTask};
use crate::error::{Error, Result};
use crate::grpo::{stepgrpo_objective, RolloutGroup, DEFAULT_BETA};
use crate::policy::{PolicyParams, DEFAULT_INIT_STD, DEFAULT_SLOTS, DEFAULT_TEMPERATURE};
use crate::rewards::{total_reward, AnswerStatus, RewardConfig, RewardMode, DEFAULT_ALPHA};

// Independent random streams derived from one seed.
const STREAM_TASKS: u64 = 1;
const STREAM_EVAL_TASKS: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_RL: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Rollouts per question.
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub warmup_iters: usize,
    pub rl_iters: usize,
    pub warmup_lr: f64,
    pub rl_lr: f64,
    pub seed: u64,
    pub reward_mode: RewardMode,
    /// Questions per update.
    pub group_batch: usize,
    /// Step budget per trajectory.
    pub slots: usize,
    pub difficulty: Difficulty,
    /// Size of the training corpus.
    pub task_count: usize,
    /// Size of the held-out corpus used for the per-iteration greedy evaluation.
    pub eval_tasks: usize,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m: 4,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            temperature: DEFAULT_TEMPERATURE,
            warmup_iters: 0,
            rl_iters: 500,
            warmup_lr: 0.5,
            rl_lr: 0.5,
            seed: 0,
            reward_mode: RewardMode::StepWise,
            group_batch: 1,
            slots: DEFAULT_SLOTS,
            difficulty: Difficulty::Two,
            task_count: 64,
            eval_tasks: 32,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::InvalidConfig(format!("{key}: {why}")));
        if self.m == 0 {
            return bad("m", "must be at least 1");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha", "must be finite and >= 0");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta", "must be finite and >= 0");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature", "must be finite and > 0");
        }
        if !(self.warmup_lr.is_finite() && self.warmup_lr > 0.0) {
            return bad("warmup_lr", "must be finite and > 0");
        }
        if !(self.rl_lr.is_finite() && self.rl_lr > 0.0) {
            return bad("rl_lr", "must be finite and > 0");
        }
        if self.group_batch == 0 {
            return bad("group_batch", "must be at least 1");
        }
        if self.slots < self.difficulty.key_step_count() + 2 {
            return bad("slots", "too small to hold background, every key step and an answer");
        }
        if self.task_count == 0 {
            return bad("task_count", "must be at least 1");
        }
        if self.eval_tasks == 0 {
            return bad("eval_tasks", "must be at least 1");
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad("init_std", "must be finite and >= 0");
        }
        Ok(())
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            alpha: self.alpha,
            mode: self.reward_mode,
        }
    }

    fn task_set(&self, stream: u64, count: usize) -> Vec<SyntheticTask> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        (0..count)
            .map(|_| generate_task(rng.random(), self.difficulty))
            .collect()
    }

    /// Training corpus; depends only on `seed`, `difficulty` and `task_count`.
    pub fn tasks(&self) -> Vec<SyntheticTask> {
        self.task_set(STREAM_TASKS, self.task_count)
    }

    pub fn eval_task_set(&self) -> Vec<SyntheticTask> {
        self.task_set(STREAM_EVAL_TASKS, self.eval_tasks)
    }

    /// Near-uniform starting policy: logits drawn from `Normal(0, init_std)`.
    pub fn initial_policy(&self) -> Result<PolicyParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_INIT);
        let space = crate::policy::ActionSpace::new(self.difficulty.key_step_count());
        PolicyParams::random_normal(self.slots, space, self.temperature, self.init_std, &mut rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub positive_fraction: f64,
    pub mean_abs_advantage: f64,
    pub kl: f64,
    pub surrogate: f64,
    pub eval_success: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "iteration,mean_reward,positive_fraction,mean_abs_advantage,kl,surrogate,eval_success";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration,
                r.mean_reward,
                r.positive_fraction,
                r.mean_abs_advantage,
                r.kl,
                r.surrogate,
                r.eval_success
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_reward: f64,
    pub mean_k: f64,
    /// Fraction with a complete, ordered structure (`r_val = 1`).
    pub structure_rate: f64,
    /// Fraction with a strictly positive reward under the given reward config.
    pub positive_rate: f64,
}

/// Mean negative log-likelihood of the gold action sequences.
pub fn nll(policy: &PolicyParams, dataset: &[(SyntheticTask, Vec<usize>)]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (_, actions) in dataset {
        total -= policy.sequence_log_prob(actions)?;
    }
    Ok(total / dataset.len() as f64)
}

/// Gold demonstrations for `tasks` under a `slots` budget.
pub fn gold_dataset(tasks: &[SyntheticTask], slots: usize) -> Result<Vec<(SyntheticTask, Vec<usize>)>> {
    tasks.iter().map(|t| Ok((t.clone(), t.gold_actions(slots)?))).collect()
}

/// Full-batch gradient descent on the NLL of gold action sequences.
pub fn warmup(
    policy: &PolicyParams,
    dataset: &[(SyntheticTask, Vec<usize>)],
    cfg: &TrainConfig,
) -> Result<PolicyParams> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut policy = policy.clone();
    let n = dataset.len() as f64;
    for iteration in 0..cfg.warmup_iters {
        let mut grad = vec![0.0; policy.logits().len()];
        for (_, actions) in dataset {
            let (_, g) = policy.sequence_log_prob_and_grad(actions)?;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / n);
        }
        // ascend the log-likelihood
        policy.apply_step(&grad, cfg.warmup_lr)?;
        if policy.logits().iter().any(|l| !l.is_finite()) {
            return Err(Error::Divergence {
                metric: "warmup logits",
                iteration,
            });
        }
    }
    Ok(policy)
}

/// Runs `episodes` rollouts cycling through `tasks`.
pub fn evaluate(
    policy: &PolicyParams,
    tasks: &[SyntheticTask],
    episodes: usize,
    seed: u64,
    decoding: Decoding,
    reward: &RewardConfig,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::EmptyTaskList);
    }
    if episodes == 0 {
        return Err(Error::InvalidConfig("episodes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut success, mut reward_sum, mut k_sum, mut structure, mut positive) = (0usize, 0.0, 0.0, 0usize, 0usize);
    for e in 0..episodes {
        let task = &tasks[e % tasks.len()];
        let traj = rollout_with(policy, task, rng.random(), decoding)?;
        let r = total_reward(&traj, &task.question, reward);
        success += usize::from(r.answer_status == AnswerStatus::Correct);
        structure += usize::from(r.r_val == 1.0);
        positive += usize::from(r.total > 0.0);
        reward_sum += r.total;
        k_sum += r.k;
    }
    let n = episodes as f64;
    Ok(EvalReport {
        success_rate: success as f64 / n,
        mean_reward: reward_sum / n,
        mean_k: k_sum / n,
        structure_rate: structure as f64 / n,
        positive_rate: positive as f64 / n,
    })
}

/// The online phase: sample questions, roll out groups of `m`, score,
/// standardize within each group, and take one SGD ascent step on the
/// surrogate objective per iteration. The reference policy is the input
/// policy, frozen.
pub fn train_stepgrpo(
    policy: &PolicyParams,
    tasks: &[SyntheticTask],
    eval_tasks: &[SyntheticTask],
    cfg: &TrainConfig,
) -> Result<(PolicyParams, TrainLog)> {
    if tasks.is_empty() || eval_tasks.is_empty() {
        return Err(Error::EmptyTaskList);
    }
    cfg.validate()?;
    let reference = policy.clone();
    let mut policy = policy.clone();
    let reward_cfg = cfg.reward_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_RL);
    let mut log = TrainLog::default();

    for iteration in 0..cfg.rl_iters {
        let mut grad = vec![0.0; policy.logits().len()];
        let (mut reward_sum, mut positive, mut abs_adv, mut kl, mut surrogate) = (0.0, 0usize, 0.0, 0.0, 0.0);
        for _ in 0..cfg.group_batch {
            let task = &tasks[rng.random_range(0..tasks.len())];
            let mut trajectories = Vec::with_capacity(cfg.m);
            let mut rewards = Vec::with_capacity(cfg.m);
            for _ in 0..cfg.m {
                let traj = rollout(&policy, task, rng.random())?;
                let r = total_reward(&traj, &task.question, &reward_cfg).total;
                reward_sum += r;
                positive += usize::from(r > 0.0);
                trajectories.push(traj);
                rewards.push(r);
            }
            let mut group = RolloutGroup::new(task.question.id.clone(), trajectories, rewards)?;
            abs_adv += group.compute_advantages()?.iter().map(|a| a.abs()).sum::<f64>();
            let report = stepgrpo_objective(&group, &policy, &reference, cfg.beta)?;
            kl += report.kl_value;
            surrogate += report.surrogate_value;
            grad.iter_mut().zip(&report.gradient).for_each(|(a, b)| *a += b);
        }
        let b = cfg.group_batch as f64;
        let n = (cfg.group_batch * cfg.m) as f64;
        grad.iter_mut().for_each(|g| *g /= b);
        policy.apply_step(&grad, cfg.rl_lr)?;

        let eval = evaluate(
            &policy,
            eval_tasks,
            eval_tasks.len(),
            cfg.seed ^ iteration as u64,
            Decoding::Greedy,
            &reward_cfg,
        )?;
        let row = TrainLogRow {
            iteration,
            mean_reward: reward_sum / n,
            positive_fraction: positive as f64 / n,
            mean_abs_advantage: abs_adv / n,
            kl: kl / b,
            surrogate: surrogate / b,
            eval_success: eval.success_rate,
        };
        for (metric, v) in [
            ("mean reward", row.mean_reward),
            ("kl", row.kl),
            ("surrogate", row.surrogate),
        ] {
            if !v.is_finite() {
                return Err(Error::Divergence { metric, iteration });
            }
        }
        if policy.logits().iter().any(|l| !l.is_finite()) {
            return Err(Error::Divergence {
                metric: "logits",
                iteration,
            });
        }
        log.rows.push(row);
    }
    Ok((policy, log))
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub initial: PolicyParams,
    pub warmed: PolicyParams,
    pub policy: PolicyParams,
    pub log: TrainLog,
}

/// Initializes from `cfg`, warms up on the training corpus's gold
/// demonstrations, then runs the online phase.
pub fn run(cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let tasks = cfg.tasks();
    let eval_tasks = cfg.eval_task_set();
    let initial = cfg.initial_policy()?;
    let warmed = warmup(&initial, &gold_dataset(&tasks, cfg.slots)?, cfg)?;
    let (policy, log) = train_stepgrpo(&warmed, &tasks, &eval_tasks, cfg)?;
    Ok(RunOutput {
        initial,
        warmed,
        policy,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            rl_iters: 20,
            task_count: 8,
            eval_tasks: 4,
            difficulty: Difficulty::One,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.m, c.alpha, c.beta, c.temperature), (4, 0.1, 0.04, 1.2));
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"m": 4, "gamma": 1}"#).unwrap_err();
        assert!(err.to_string().contains("gamma"));
        let partial: TrainConfig =
            serde_json::from_str(r#"{"m": 8, "reward_mode": "outcome", "difficulty": 3}"#).unwrap();
        assert_eq!(
            (partial.m, partial.reward_mode, partial.difficulty),
            (8, RewardMode::OutcomeOnly, Difficulty::Three)
        );
    }

    #[test]
    fn invalid_values_name_the_key() {
        let c = TrainConfig { slots: 3, ..small() };
        assert!(c.validate().unwrap_err().to_string().contains("slots"));
        let c = TrainConfig {
            temperature: 0.0,
            ..small()
        };
        assert!(c.validate().unwrap_err().to_string().contains("temperature"));
    }

    #[test]
    fn zero_warmup_iterations_is_a_no_op() {
        let cfg = small();
        let p = cfg.initial_policy().unwrap();
        let data = gold_dataset(&cfg.tasks(), cfg.slots).unwrap();
        assert_eq!(warmup(&p, &data, &cfg).unwrap(), p);
        assert!(matches!(warmup(&p, &[], &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn warmup_reduces_nll() {
        let cfg = TrainConfig {
            warmup_iters: 30,
            ..small()
        };
        let p = cfg.initial_policy().unwrap();
        let data = gold_dataset(&cfg.tasks(), cfg.slots).unwrap();
        let before = nll(&p, &data).unwrap();
        let after = nll(&warmup(&p, &data, &cfg).unwrap(), &data).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn oracle_policy_always_succeeds() {
        let cfg = small();
        let tasks = cfg.tasks();
        let mut p = PolicyParams::uniform(cfg.slots, tasks[0].action_space(), 1.2).unwrap();
        for (slot, &a) in tasks[0].gold_actions(cfg.slots).unwrap().iter().enumerate() {
            p.set_logit(slot, a, 50.0);
        }
        let r = evaluate(&p, &tasks, 16, 3, Decoding::Greedy, &cfg.reward_config()).unwrap();
        assert_eq!((r.success_rate, r.structure_rate, r.mean_k), (1.0, 1.0, 1.0));
        assert!((r.mean_reward - 2.1).abs() < 1e-12);
        let r = evaluate(&p, &tasks, 1, 0, Decoding::Sample, &cfg.reward_config()).unwrap();
        assert!(r.mean_reward.is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.log.rows.len(), cfg.rl_iters);
        assert!(a.log.rows.iter().all(|r| r.kl >= 0.0));
        assert!(a.log.rows.windows(2).all(|w| w[0].iteration < w[1].iteration));
    }

    #[test]
    fn outcome_rewards_are_binary() {
        let cfg = TrainConfig {
            reward_mode: RewardMode::OutcomeOnly,
            m: 1,
            ..small()
        };
        let out = run(&cfg).unwrap();
        assert!(out
            .log
            .rows
            .iter()
            .all(|r| r.mean_reward == 0.0 || r.mean_reward == 1.0));
    }

    #[test]
    fn zero_beta_and_flat_rewards_leave_parameters_unchanged() {
        // a single rollout per group always has zero advantage
        let cfg = TrainConfig {
            beta: 0.0,
            m: 1,
            ..small()
        };
        let p = cfg.initial_policy().unwrap();
        let (after, log) = train_stepgrpo(&p, &cfg.tasks(), &cfg.eval_task_set(), &cfg).unwrap();
        assert_eq!(after, p);
        assert!(log.rows.iter().all(|r| r.mean_abs_advantage == 0.0));
    }

    #[test]
    fn large_beta_anchors_to_the_reference() {
        let base = TrainConfig {
            rl_iters: 100,
            rl_lr: 0.05,
            ..small()
        };
        let p = base.initial_policy().unwrap();
        let drift = |beta: f64| {
            let cfg = TrainConfig { beta, ..base.clone() };
            let (after, _) = train_stepgrpo(&p, &cfg.tasks(), &cfg.eval_task_set(), &cfg).unwrap();
            after.distance(&p).unwrap()
        };
        assert!(drift(10.0) < drift(0.0));
    }

    #[test]
    fn csv_header_is_fixed() {
        let csv = run(&TrainConfig { rl_iters: 2, ..small() }).unwrap().log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TrainLog::CSV_HEADER));
        assert_eq!(lines.count(), 2);
    }
}
