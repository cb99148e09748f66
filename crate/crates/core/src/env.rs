//! Synthetic arithmetic reasoning tasks and policy rollouts.
//!
//! A task asks for a nested expression such as `(a+b)*c-d`. Its key steps are
//! the chain of intermediate equations (`a+b=s`, `s*c=p`, `p-d=y`); each link
//! consumes the previous link's result.
//!
//! Rollouts render actions into the marker text format while tracking how
//! much of the chain has been derived:
//!
//! - the background is where the operands are read off the question; until it
//!   has been written, no link has its inputs;
//! - a key step whose input is available renders as one of its equivalent
//!   variants and extends the chain when it is the next link;
//! - a key step whose input is not available is written with a guessed
//!   input (a *slip*: valid arithmetic, wrong numbers) and breaks the chain;
//! - a distractor step is a digression that loses the running result;
//! - the answer action reports what the chain supports: the gold answer once
//!   every link is derived, otherwise the latest intermediate result or a guess.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keystep::{augment_variants, match_key_steps, KeyStep, KeyStepSet};
use crate::normalize::normalize_expression;
use crate::policy::{Action, ActionSpace, PolicyParams};
use crate::trajectory::{parse_trajectory, Question, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Difficulty {
    /// `(a±b)*c`: two key steps.
    One,
    /// `(a±b)*c-d`: three key steps.
    Two,
    /// `((a±b)*c-d)/e`: four key steps.
    Three,
}

impl Difficulty {
    pub fn key_step_count(self) -> usize {
        match self {
            Difficulty::One => 2,
            Difficulty::Two => 3,
            Difficulty::Three => 4,
        }
    }
}

impl TryFrom<u8> for Difficulty {
    type Error = Error;

    fn try_from(d: u8) -> Result<Self> {
        match d {
            1 => Ok(Difficulty::One),
            2 => Ok(Difficulty::Two),
            3 => Ok(Difficulty::Three),
            other => Err(Error::InvalidConfig(format!(
                "difficulty must be 1, 2 or 3, got {other}"
            ))),
        }
    }
}

impl From<Difficulty> for u8 {
    fn from(d: Difficulty) -> u8 {
        match d {
            Difficulty::One => 1,
            Difficulty::Two => 2,
            Difficulty::Three => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    #[default]
    Sample,
    /// Highest-logit action at every slot.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    #[serde(flatten)]
    pub question: Question,
    pub template_id: u32,
    pub difficulty: Difficulty,
    /// Result of each chain link; the last one is the gold answer.
    pub chain_values: Vec<i64>,
    /// What link `j` looks like when written with a guessed input.
    pub slip_steps: Vec<String>,
    pub wrong_answer: String,
}

const DISTRACTORS: &[&str] = &[
    "Let me reconsider what the question is really asking.",
    "Perhaps there is a shortcut, so I will look at the problem from another angle.",
    "I should double-check whether the operations can be reordered.",
    "Maybe rounding would make this easier.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
            Op::Div => '/',
        }
    }

    fn apply(self, x: i64, y: i64) -> i64 {
        match self {
            Op::Add => x + y,
            Op::Sub => x - y,
            Op::Mul => x * y,
            Op::Div => x / y,
        }
    }
}

fn equation(x: i64, op: Op, y: i64) -> String {
    format!("{x}{}{y}={}", op.symbol(), op.apply(x, y))
}

struct Draft {
    /// (left operand of the first link, [(op, right operand)] per link)
    first: i64,
    links: Vec<(Op, i64)>,
}

impl Draft {
    fn chain(&self) -> Vec<i64> {
        let mut acc = self.first;
        self.links
            .iter()
            .map(|&(op, y)| {
                acc = op.apply(acc, y);
                acc
            })
            .collect()
    }

    fn expression(&self) -> String {
        let mut expr = self.first.to_string();
        for (i, &(op, y)) in self.links.iter().enumerate() {
            if i > 0 && matches!(op, Op::Mul | Op::Div) {
                expr = format!("({expr})");
            }
            expr = format!("{expr}{}{y}", op.symbol());
        }
        expr
    }
}

fn draft(rng: &mut ChaCha8Rng, difficulty: Difficulty, template_id: u32) -> Draft {
    let (lo, hi) = match difficulty {
        Difficulty::One => (1, 9),
        Difficulty::Two => (2, 19),
        Difficulty::Three => (10, 49),
    };
    let mut a = rng.random_range(lo..=hi);
    let mut b = rng.random_range(lo..=hi);
    let first_op = if template_id == 1 {
        if a == b {
            a += 1;
        }
        if a < b {
            std::mem::swap(&mut a, &mut b);
        }
        Op::Sub
    } else {
        Op::Add
    };
    let c_max = if difficulty == Difficulty::Three { 12 } else { 9 };
    let c = rng.random_range(2..=c_max);
    let mut links = vec![(first_op, b), (Op::Mul, c)];
    if difficulty >= Difficulty::Two {
        let p = first_op.apply(a, b) * c;
        let mut d = rng.random_range(1..=30.min(p - 1).max(1));
        if difficulty == Difficulty::Three {
            let e = rng.random_range(2..=9);
            // make p - d divisible by e while keeping it positive
            d += (p - d).rem_euclid(e);
            if p - d <= 0 {
                d -= e;
            }
            links.push((Op::Sub, d));
            links.push((Op::Div, e));
        } else {
            links.push((Op::Sub, d));
        }
    }
    Draft { first: a, links }
}

fn draft_is_usable(d: &Draft) -> bool {
    let chain = d.chain();
    let distinct = chain.iter().enumerate().all(|(i, v)| !chain[..i].contains(v));
    distinct && chain.iter().all(|&v| v > 0) && d.links.iter().all(|&(_, y)| y > 0)
}

/// Equation for link `j` when its input is guessed as `input`.
fn slip_for(d: &Draft, j: usize, input: i64) -> String {
    let (op, y) = d.links[j];
    equation(input, op, y)
}

fn key_steps_for(d: &Draft) -> KeyStepSet {
    let mut input = d.first;
    let steps = d
        .links
        .iter()
        .map(|&(op, y)| {
            let c = equation(input, op, y);
            input = op.apply(input, y);
            KeyStep::with_variants(c.clone(), augment_variants(&c)).expect("non-empty equation")
        })
        .collect();
    KeyStepSet::new(steps)
}

/// Every variant of a link matches that link and no other.
fn key_steps_are_separable(set: &KeyStepSet) -> bool {
    set.steps().iter().enumerate().all(|(j, step)| {
        step.variants().iter().all(|v| {
            let m = match_key_steps(v, set);
            m.per_step.iter().all(|s| s.matched == (s.index == j))
        })
    })
}

/// Deterministic task for `seed`.
pub fn generate_task(seed: u64, difficulty: Difficulty) -> SyntheticTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a5c_0000_0000);
    let template_id: u32 = rng.random_range(0..2);
    let (d, key_steps) = loop {
        let d = draft(&mut rng, difficulty, template_id);
        if !draft_is_usable(&d) {
            continue;
        }
        let key_steps = key_steps_for(&d);
        if key_steps_are_separable(&key_steps) {
            break (d, key_steps);
        }
    };
    let chain = d.chain();
    let gold = *chain.last().expect("chain has at least two links");
    let mut inputs = vec![d.first];
    inputs.extend_from_slice(&chain[..chain.len() - 1]);

    let mut slip_steps = Vec::with_capacity(d.links.len());
    for (j, &input) in inputs.iter().enumerate() {
        let slip = loop {
            let mut delta: i64 = rng.random_range(1..=3);
            if rng.random_bool(0.5) && input - delta > 0 {
                delta = -delta;
            }
            // division slips stay integral
            let delta = if d.links[j].0 == Op::Div {
                delta * d.links[j].1
            } else {
                delta
            };
            let guess = input + delta;
            if guess <= 0 || d.links[j].0.apply(guess, d.links[j].1) <= 0 {
                continue;
            }
            let s = slip_for(&d, j, guess);
            if match_key_steps(&s, &key_steps).matched_count == 0 {
                break s;
            }
        };
        slip_steps.push(slip);
    }

    let wrong_answer = loop {
        let delta: i64 = rng.random_range(1..=9) * if rng.random_bool(0.5) { 1 } else { -1 };
        let w = gold + delta;
        if w > 0 && !chain.contains(&w) {
            break w.to_string();
        }
    };

    let expr = d.expression();
    SyntheticTask {
        question: Question {
            id: format!("synthetic-d{}-{seed}", u8::from(difficulty)),
            prompt: format!("Compute {expr}."),
            gold_answer: gold.to_string(),
            key_steps,
        },
        template_id,
        difficulty,
        chain_values: chain,
        slip_steps,
        wrong_answer,
    }
}

impl SyntheticTask {
    pub fn key_step_count(&self) -> usize {
        self.question.key_steps.len()
    }

    pub fn action_space(&self) -> ActionSpace {
        ActionSpace::new(self.key_step_count())
    }

    /// The reference solution: background, every link in order, answer, stop.
    /// Stop is dropped when the slot budget is one short.
    pub fn gold_actions(&self, slots: usize) -> Result<Vec<usize>> {
        let space = self.action_space();
        let mut actions = vec![space.index(Action::EmitBackground)];
        actions.extend((0..self.key_step_count()).map(|j| space.index(Action::EmitKeyStep(j))));
        actions.push(space.index(Action::EmitCorrectAnswer));
        if actions.len() > slots {
            return Err(Error::GeometryMismatch(format!(
                "the gold solution needs {} slots, policy has {slots}",
                actions.len()
            )));
        }
        if actions.len() < slots {
            actions.push(space.index(Action::Stop));
        }
        Ok(actions)
    }

    /// Checks internal consistency: the chain re-evaluates to the gold answer,
    /// every key step parses as `x op y = z` with the recorded values.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidTask(format!("{}: {msg}", self.question.id)));
        if self.chain_values.len() != self.key_step_count() || self.slip_steps.len() != self.key_step_count() {
            return fail("chain, slips and key steps disagree in length".into());
        }
        if self.chain_values.last().map(i64::to_string) != Some(normalize_expression(&self.question.gold_answer)) {
            return fail("last chain value is not the gold answer".into());
        }
        for (j, step) in self.question.key_steps.steps().iter().enumerate() {
            let Some((lhs, rhs)) = step.normalized_canonical().split_once('=') else {
                return fail(format!("key step {j} is not an equation"));
            };
            if rhs.parse::<i64>().ok() != Some(self.chain_values[j]) {
                return fail(format!(
                    "key step {j} does not produce chain value {}",
                    self.chain_values[j]
                ));
            }
            if j > 0 && !lhs.starts_with(&self.chain_values[j - 1].to_string()) {
                return fail(format!("key step {j} does not consume the previous result"));
            }
        }
        Ok(())
    }
}

/// Chain bookkeeping while rendering a rollout.
#[derive(Default)]
struct ChainState {
    grounded: bool,
    derived: usize,
}

impl ChainState {
    /// Returns true when link `j` can be written correctly.
    fn key_step(&mut self, j: usize) -> bool {
        if !self.grounded || j > self.derived {
            self.derived = 0;
            return false;
        }
        if j == self.derived {
            self.derived += 1;
        }
        true
    }

    fn digress(&mut self) {
        self.derived = 0;
    }
}

/// Samples one trajectory for `task`. Deterministic in `rng_seed`.
pub fn rollout(policy: &PolicyParams, task: &SyntheticTask, rng_seed: u64) -> Result<Trajectory> {
    rollout_with(policy, task, rng_seed, Decoding::Sample)
}

pub fn rollout_with(
    policy: &PolicyParams,
    task: &SyntheticTask,
    rng_seed: u64,
    decoding: Decoding,
) -> Result<Trajectory> {
    let space = policy.action_space();
    if space != task.action_space() {
        return Err(Error::GeometryMismatch(format!(
            "policy has {} key-step actions, task {} has {} key steps",
            space.key_steps,
            task.question.id,
            task.key_step_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut actions = Vec::with_capacity(policy.slots());
    let mut truncated = true;
    for slot in 0..policy.slots() {
        let a = match decoding {
            Decoding::Sample => policy.sample(slot, &mut rng),
            Decoding::Greedy => policy.greedy(slot),
        };
        actions.push(a);
        if space.action(a) == Some(Action::Stop) {
            truncated = false;
            break;
        }
    }
    let raw_text = render(task, &actions, &mut rng);
    let log_prob = policy.sequence_log_prob(&actions)?;
    Ok(Trajectory {
        question_id: task.question.id.clone(),
        parsed: parse_trajectory(&raw_text),
        raw_text,
        log_prob,
        truncated,
        actions,
    })
}

/// Renders an action sequence into marker text; `rng` picks surface variants.
pub fn render<R: Rng + ?Sized>(task: &SyntheticTask, actions: &[usize], rng: &mut R) -> String {
    let space = task.action_space();
    let steps = task.question.key_steps.steps();
    let mut chain = ChainState::default();
    let mut lines: Vec<String> = Vec::with_capacity(actions.len());
    let mut step_no = 0;
    for &a in actions {
        match space.action(a) {
            Some(Action::EmitBackground) => {
                chain.grounded = true;
                lines.push(format!(
                    "BACKGROUND: {} Work from the innermost operation outward, carrying each result forward.",
                    task.question.prompt
                ))
            }
            Some(Action::EmitKeyStep(j)) => {
                step_no += 1;
                let body = if chain.key_step(j) {
                    let variants = steps[j].variants();
                    variants[rng.random_range(0..variants.len())].clone()
                } else {
                    task.slip_steps[j].clone()
                };
                lines.push(format!("STEP {step_no}: {body}"));
            }
            Some(Action::EmitDistractorStep) => {
                step_no += 1;
                chain.digress();
                let body = DISTRACTORS[rng.random_range(0..DISTRACTORS.len())];
                lines.push(format!("STEP {step_no}: {body}"));
            }
            Some(Action::EmitCorrectAnswer) => {
                let value = match chain.derived {
                    n if chain.grounded && n == steps.len() => task.question.gold_answer.clone(),
                    0 => task.wrong_answer.clone(),
                    n => task.chain_values[n - 1].to_string(),
                };
                lines.push(format!("ANSWER: {value}"));
            }
            Some(Action::EmitWrongAnswer) => lines.push(format!("ANSWER: {}", task.wrong_answer)),
            Some(Action::Stop) | None => {}
        }
    }
    lines.join("\n")
}
