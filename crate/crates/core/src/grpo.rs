//! Group-relative advantages, the KL estimator and the StepGRPO objective.
//!
//! Sign convention: [`ObjectiveReport::surrogate_value`] is the objective to
//! *maximize*,
//!
//! ```text
//! J(θ) = 1/M Σ_i [ exp(logπ_θ(c_i) − sg(logπ_θ(c_i))) · A_i − β · kl_i ]
//! kl_i = π_ref(c_i)/π_θ(c_i) − ln(π_ref(c_i)/π_θ(c_i)) − 1
//! ```
//!
//! where `sg` stops gradients, so the ratio term equals `A_i` in value and has
//! gradient `A_i · ∇logπ_θ(c_i)`. The training loss is `−J`
//! ([`ObjectiveReport::loss`]); [`ObjectiveReport::gradient`] is `∇J`, so an
//! optimizer step is `θ ← θ + lr · gradient`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const DEFAULT_BETA: f64 = 0.04;

/// Groups with reward standard deviation below this get zero advantages.
pub const DEGENERATE_STD: f64 = 1e-8;

/// A policy that can score, and differentiate the log-probability of, a
/// trajectory it generated. Gradients are flat parameter vectors.
pub trait SequencePolicy {
    fn param_count(&self) -> usize;

    fn log_prob_and_grad(&self, traj: &Trajectory) -> Result<(f64, Vec<f64>)>;

    fn log_prob(&self, traj: &Trajectory) -> Result<f64> {
        self.log_prob_and_grad(traj).map(|(lp, _)| lp)
    }

    /// Errors unless `other` has the same parameter geometry.
    fn check_compatible(&self, other: &Self) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub question_id: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
}

impl RolloutGroup {
    pub fn new(question_id: impl Into<String>, trajectories: Vec<Trajectory>, rewards: Vec<f64>) -> Result<Self> {
        let group = Self {
            question_id: question_id.into(),
            trajectories,
            rewards,
            advantages: None,
        };
        group.validate()?;
        Ok(group)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.trajectories.len();
        let adv = self.advantages.as_ref().map_or(m, Vec::len);
        if m == 0 {
            return Err(Error::EmptyGroup);
        }
        if self.rewards.len() != m || adv != m {
            return Err(Error::GroupShape {
                trajectories: m,
                rewards: self.rewards.len(),
                advantages: adv,
            });
        }
        Ok(())
    }

    pub fn compute_advantages(&mut self) -> Result<&[f64]> {
        let adv = group_advantages(&self.rewards)?;
        Ok(self.advantages.insert(adv))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    /// `J`, averaged over the group; see the module docs for the sign.
    pub surrogate_value: f64,
    /// `−J`.
    pub loss: f64,
    /// Mean per-trajectory KL estimate; always ≥ 0.
    pub kl_value: f64,
    /// `∇J` with respect to the policy parameters.
    pub gradient: Vec<f64>,
    pub beta: f64,
}

/// Standardizes rewards within a group: `(r − mean) / std` with the
/// population standard deviation, or all zeros when the group has no spread.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std < DEGENERATE_STD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `x − ln x − 1` for the probability ratio `x = π_ref/π_θ`.
pub fn kl_estimate(ratio: f64) -> Result<f64> {
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(Error::InvalidRatio(ratio));
    }
    let d = ratio - 1.0;
    if d.abs() < 1e-3 {
        // d − ln(1+d), summed as a series: the direct form cancels near x = 1.
        Ok(d * d * (0.5 - d * (1.0 / 3.0 - d * (0.25 - d * (0.2 - d / 6.0)))))
    } else {
        Ok(d - ratio.ln())
    }
}

/// The same estimator from `Δ = ln x = logπ_ref − logπ_θ`, i.e. `e^Δ − Δ − 1`.
/// Overflows to `+inf` for very large `Δ`.
pub fn kl_from_log_ratio(delta: f64) -> f64 {
    if delta.abs() < 1e-3 {
        delta * delta * (0.5 + delta * (1.0 / 6.0 + delta * (1.0 / 24.0 + delta * (1.0 / 120.0 + delta / 720.0))))
    } else {
        delta.exp_m1() - delta
    }
}

/// Evaluates the StepGRPO objective on one rollout group and its analytic
/// gradient. The KL gradient uses `∂kl/∂logπ_θ = 1 − ratio`.
pub fn stepgrpo_objective<P: SequencePolicy>(
    group: &RolloutGroup,
    policy: &P,
    ref_policy: &P,
    beta: f64,
) -> Result<ObjectiveReport> {
    policy.check_compatible(ref_policy)?;
    group.validate()?;
    let advantages = group
        .advantages
        .as_deref()
        .ok_or_else(|| Error::MissingAdvantages(group.question_id.clone()))?;

    let m = group.len() as f64;
    let mut gradient = vec![0.0; policy.param_count()];
    let mut surrogate = 0.0;
    let mut kl_total = 0.0;
    for (traj, &adv) in group.trajectories.iter().zip(advantages) {
        let (logp, grad) = policy.log_prob_and_grad(traj)?;
        let logp_ref = ref_policy.log_prob(traj)?;
        let delta = logp_ref - logp;
        let ratio = delta.exp();
        if !ratio.is_finite() || ratio <= 0.0 {
            return Err(Error::InvalidRatio(ratio));
        }
        let kl = kl_from_log_ratio(delta);
        // exp(logp - sg(logp)) is exactly 1 in value
        let logp_detached = logp;
        let detached_ratio = (logp - logp_detached).exp();
        surrogate += detached_ratio * adv - beta * kl;
        kl_total += kl;

        let coeff = adv - beta * (1.0 - ratio);
        for (g, d) in gradient.iter_mut().zip(&grad) {
            *g += coeff * d;
        }
    }
    gradient.iter_mut().for_each(|g| *g /= m);
    let surrogate_value = surrogate / m;
    Ok(ObjectiveReport {
        surrogate_value,
        loss: -surrogate_value,
        kl_value: kl_total / m,
        gradient,
        beta,
    })
}
