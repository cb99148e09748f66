//! Slot-wise categorical policy with analytic log-probability gradients.
//!
//! Slot `t` of a trajectory is drawn from `softmax(logits[t] / temperature)`,
//! independently of earlier slots. For a trajectory that visited slots
//! `0..n` the log-probability is `Σ_t log softmax(logits[t]/τ)[a_t]` and its
//! gradient row for slot `t` is `(onehot(a_t) − softmax(logits[t]/τ)) / τ`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::SequencePolicy;
use crate::trajectory::Trajectory;

pub const DEFAULT_TEMPERATURE: f64 = 1.2;
pub const DEFAULT_SLOTS: usize = 8;
pub const DEFAULT_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    EmitBackground,
    /// Zero-based index into the task's key steps.
    EmitKeyStep(usize),
    EmitDistractorStep,
    /// Commit to the answer the reasoning so far supports.
    EmitCorrectAnswer,
    /// Commit to an unsupported guess.
    EmitWrongAnswer,
    Stop,
}

/// Index layout: background, one action per key step, distractor, correct
/// answer, wrong answer, stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSpace {
    pub key_steps: usize,
}

impl ActionSpace {
    pub fn new(key_steps: usize) -> Self {
        Self { key_steps }
    }

    pub fn len(&self) -> usize {
        self.key_steps + 5
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, action: Action) -> usize {
        let k = self.key_steps;
        match action {
            Action::EmitBackground => 0,
            Action::EmitKeyStep(j) => {
                assert!(j < k, "key step {j} out of range for {k} key steps");
                1 + j
            }
            Action::EmitDistractorStep => k + 1,
            Action::EmitCorrectAnswer => k + 2,
            Action::EmitWrongAnswer => k + 3,
            Action::Stop => k + 4,
        }
    }

    pub fn action(&self, index: usize) -> Option<Action> {
        let k = self.key_steps;
        Some(match index {
            0 => Action::EmitBackground,
            i if i <= k => Action::EmitKeyStep(i - 1),
            i if i == k + 1 => Action::EmitDistractorStep,
            i if i == k + 2 => Action::EmitCorrectAnswer,
            i if i == k + 3 => Action::EmitWrongAnswer,
            i if i == k + 4 => Action::Stop,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct PolicyParams {
    slots: usize,
    space: ActionSpace,
    temperature: f64,
    /// Row-major `slots × actions`.
    logits: Vec<f64>,
}

/// On-disk layout: slot-major nested logits.
#[derive(Serialize, Deserialize)]
struct PolicyFile {
    slots: usize,
    actions: usize,
    key_steps: usize,
    temperature: f64,
    logits: Vec<Vec<f64>>,
}

impl From<PolicyParams> for PolicyFile {
    fn from(p: PolicyParams) -> Self {
        let actions = p.space.len();
        Self {
            slots: p.slots,
            actions,
            key_steps: p.space.key_steps,
            temperature: p.temperature,
            logits: p.logits.chunks(actions).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl TryFrom<PolicyFile> for PolicyParams {
    type Error = Error;

    fn try_from(f: PolicyFile) -> Result<Self> {
        let space = ActionSpace::new(f.key_steps);
        if f.actions != space.len() || f.logits.len() != f.slots || f.logits.iter().any(|r| r.len() != f.actions) {
            return Err(Error::GeometryMismatch(format!(
                "logits must be {} rows of {} values",
                f.slots,
                space.len()
            )));
        }
        let mut p = Self::uniform(f.slots, space, f.temperature)?;
        p.logits = f.logits.into_iter().flatten().collect();
        Ok(p)
    }
}

impl PolicyParams {
    pub fn uniform(slots: usize, space: ActionSpace, temperature: f64) -> Result<Self> {
        if slots == 0 {
            return Err(Error::InvalidConfig("slot count must be ≥ 1".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        Ok(Self {
            slots,
            space,
            temperature,
            logits: vec![0.0; slots * space.len()],
        })
    }

    /// Logits drawn i.i.d. from `Normal(0, std)`.
    pub fn random_normal<R: Rng + ?Sized>(
        slots: usize,
        space: ActionSpace,
        temperature: f64,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::uniform(slots, space, temperature)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(format!("init std {std}: {e}")))?;
        for l in &mut p.logits {
            *l = normal.sample(rng);
        }
        Ok(p)
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn action_count(&self) -> usize {
        self.space.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn slot_logits(&self, slot: usize) -> &[f64] {
        let a = self.action_count();
        &self.logits[slot * a..(slot + 1) * a]
    }

    pub fn set_logit(&mut self, slot: usize, action: usize, value: f64) {
        let a = self.action_count();
        self.logits[slot * a + action] = value;
    }

    /// `softmax(logits[slot] / temperature)`.
    pub fn probs(&self, slot: usize) -> Vec<f64> {
        let scaled: Vec<f64> = self.slot_logits(slot).iter().map(|l| l / self.temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }

    pub fn log_probs(&self, slot: usize) -> Vec<f64> {
        let scaled: Vec<f64> = self.slot_logits(slot).iter().map(|l| l / self.temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        scaled.into_iter().map(|s| s - lse).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, slot: usize, rng: &mut R) -> usize {
        let probs = self.probs(slot);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Highest-logit action; ties go to the lowest index.
    pub fn greedy(&self, slot: usize) -> usize {
        let row = self.slot_logits(slot);
        let mut best = 0;
        for (i, &l) in row.iter().enumerate() {
            if l > row[best] {
                best = i;
            }
        }
        best
    }

    /// Log-probability of an action sequence starting at slot 0.
    pub fn sequence_log_prob(&self, actions: &[usize]) -> Result<f64> {
        self.check_actions(actions)?;
        Ok(actions.iter().enumerate().map(|(t, &a)| self.log_probs(t)[a]).sum())
    }

    /// Log-probability and gradient with respect to the logits.
    pub fn sequence_log_prob_and_grad(&self, actions: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_actions(actions)?;
        let a_count = self.action_count();
        let inv_t = 1.0 / self.temperature;
        let mut grad = vec![0.0; self.logits.len()];
        let mut logp = 0.0;
        for (t, &a) in actions.iter().enumerate() {
            let lp = self.log_probs(t);
            logp += lp[a];
            let row = &mut grad[t * a_count..(t + 1) * a_count];
            for (g, l) in row.iter_mut().zip(&lp) {
                *g = -l.exp() * inv_t;
            }
            row[a] += inv_t;
        }
        Ok((logp, grad))
    }

    fn check_actions(&self, actions: &[usize]) -> Result<()> {
        if actions.len() > self.slots {
            return Err(Error::GeometryMismatch(format!(
                "trajectory has {} actions but the policy has {} slots",
                actions.len(),
                self.slots
            )));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.action_count()) {
            return Err(Error::GeometryMismatch(format!(
                "action index {bad} outside a space of {} actions",
                self.action_count()
            )));
        }
        Ok(())
    }

    /// Euclidean distance between parameter vectors of equal geometry.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .logits
            .iter()
            .zip(&other.logits)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// `θ ← θ + step · direction`.
    pub fn apply_step(&mut self, direction: &[f64], step: f64) -> Result<()> {
        if direction.len() != self.logits.len() {
            return Err(Error::GeometryMismatch(format!(
                "update has {} values, policy has {}",
                direction.len(),
                self.logits.len()
            )));
        }
        for (l, d) in self.logits.iter_mut().zip(direction) {
            *l += step * d;
        }
        Ok(())
    }
}

impl SequencePolicy for PolicyParams {
    fn param_count(&self) -> usize {
        self.logits.len()
    }

    fn log_prob_and_grad(&self, traj: &Trajectory) -> Result<(f64, Vec<f64>)> {
        self.sequence_log_prob_and_grad(&traj.actions)
    }

    fn log_prob(&self, traj: &Trajectory) -> Result<f64> {
        self.sequence_log_prob(&traj.actions)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.slots != other.slots || self.space != other.space {
            return Err(Error::GeometryMismatch(format!(
                "{}×{} vs {}×{}",
                self.slots,
                self.action_count(),
                other.slots,
                other.action_count()
            )));
        }
        Ok(())
    }
}

/// Log-probability and gradient of a trajectory under `policy`.
pub fn log_prob_and_grad(policy: &PolicyParams, traj: &Trajectory) -> Result<(f64, Vec<f64>)> {
    policy.sequence_log_prob_and_grad(&traj.actions)
}
