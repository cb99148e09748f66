//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepgrpo::env::render;
use stepgrpo::grpo::kl_from_log_ratio;
use stepgrpo::trainer::{gold_dataset, nll, run, warmup};
use stepgrpo::{
    evaluate, generate_task, group_advantages, kl_estimate, match_key_steps, stepgrpo_objective, total_reward, Action,
    ActionSpace, Decoding, Difficulty, KeyStep, KeyStepSet, PolicyParams, Question, RewardConfig, RewardMode,
    RolloutGroup, SyntheticTask, TrainConfig, Trajectory,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    check(took < limit, format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(took)
}

// 1 ------------------------------------------------------------------------

fn reward_exactness() -> Outcome {
    let start = Instant::now();
    let question = Question {
        id: "q".into(),
        prompt: "A 6 m rope is cut into 3 equal pieces; 5 such pieces are laid end to end.".into(),
        gold_answer: "10".into(),
        key_steps: KeyStepSet::from_canonicals(["\\frac{6}{3} = 2", "2*5=10"]).map_err(|e| e.to_string())?,
    };

    // (text, stepwise total, outcome total), totals worked out by hand with alpha = 0.1
    let cases: [(&str, &str, f64, f64); 6] = [
        (
            "correct answer, both key steps, valid structure",
            "BACKGROUND: rope of 6 m\nSTEP 1: 6 divided by 3 equals 2\nSTEP 2: 2 times 5 equals 10\nANSWER: 10",
            1.0 + 0.1 + 1.0,
            1.0,
        ),
        (
            "correct answer, one of two key steps",
            "BACKGROUND: rope of 6 m\nSTEP 1: 6/3 = 2\nSTEP 2: then multiply\nANSWER: 10",
            1.0 + 0.05 + 1.0,
            1.0,
        ),
        (
            "wrong answer, both key steps",
            "BACKGROUND: rope of 6 m\nSTEP 1: \\frac{6}{3} = 2\nSTEP 2: 2*5=10\nANSWER: 12",
            0.1 + 1.0,
            0.0,
        ),
        (
            "no answer",
            "BACKGROUND: rope of 6 m\nSTEP 1: 6/3=2\nSTEP 2: 2*5=10",
            0.0,
            0.0,
        ),
        (
            "answer before the steps",
            "BACKGROUND: rope of 6 m\nANSWER: 10\nSTEP 1: 6/3=2\nSTEP 2: 2*5=10",
            1.0 + 0.1,
            1.0,
        ),
        ("no background, no key steps", "STEP 1: it is ten\nANSWER: 10", 1.0, 1.0),
    ];
    for (name, text, stepwise, outcome) in cases {
        let traj = Trajectory::from_text("q", text);
        for (mode, want) in [(RewardMode::StepWise, stepwise), (RewardMode::OutcomeOnly, outcome)] {
            let got = total_reward(&traj, &question, &RewardConfig { alpha: 0.1, mode }).total;
            check(
                (got - want).abs() < 1e-12,
                format!("{name} ({mode}): total {got}, expected {want}"),
            )?;
        }
    }

    let step = KeyStep::new("\\frac{6}{3} = 2").map_err(|e| e.to_string())?;
    let set = KeyStepSet::new(vec![step]);
    for text in ["\\frac{6}{3} = 2", "6/3 = 2", "6 divided by 3 equals 2"] {
        check(
            match_key_steps(text, &set).matched_count == 1,
            format!("{text:?} does not match the key step"),
        )?;
    }
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!("12 cases exact, augmentation example matches ({took:.2?})"))
}

// 2 ------------------------------------------------------------------------

fn mean_popstd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn advantage_normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut groups = 0;
    while groups < 1000 {
        let m = rng.random_range(2..=8);
        let rewards: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.1)).collect();
        if mean_popstd(&rewards).1 < 1e-6 {
            continue;
        }
        groups += 1;
        let adv = group_advantages(&rewards).map_err(|e| e.to_string())?;
        let (mean, std) = mean_popstd(&adv);
        check(mean.abs() <= 1e-9, format!("mean {mean:e} for {rewards:?}"))?;
        check((std - 1.0).abs() <= 1e-9, format!("std {std} for {rewards:?}"))?;

        let shift = rng.random_range(-5.0..5.0);
        let scale = rng.random_range(0.1..10.0);
        for (label, transformed) in [
            ("shift", rewards.iter().map(|r| r + shift).collect::<Vec<_>>()),
            ("scale", rewards.iter().map(|r| r * scale).collect::<Vec<_>>()),
        ] {
            let other = group_advantages(&transformed).map_err(|e| e.to_string())?;
            let worst = adv.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            check(worst <= 1e-9, format!("{label} changed advantages by {worst:e}"))?;
        }
    }
    for m in 1..=8 {
        let flat = vec![rng.random_range(0.0..2.1); m];
        let adv = group_advantages(&flat).map_err(|e| e.to_string())?;
        check(
            adv.iter().all(|&a| a == 0.0),
            format!("zero-variance group gave {adv:?}"),
        )?;
    }
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!(
        "1000 groups standardized, invariant under shift/scale ({took:.2?})"
    ))
}

// 3 ------------------------------------------------------------------------

fn kl_estimator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let x = 10f64.powf(rng.random_range(-6.0..6.0));
        let kl = kl_estimate(x).map_err(|e| e.to_string())?;
        check(kl >= 0.0, format!("kl({x}) = {kl}"))?;
        check(kl > 0.0 || (x - 1.0).abs() <= 1e-12, format!("kl({x}) = 0 away from 1"))?;
    }
    let at_one = kl_estimate(1.0).map_err(|e| e.to_string())?;
    check(at_one.abs() <= 1e-12, format!("kl(1) = {at_one}"))?;
    let want = 2.0 - std::f64::consts::LN_2 - 1.0;
    let got = kl_estimate(2.0).map_err(|e| e.to_string())?;
    check((got - want).abs() <= 1e-12, format!("kl(2) = {got}, expected {want}"))?;
    Ok(format!("10000 samples non-negative, kl(2) = {got:.12}"))
}

// 4 ------------------------------------------------------------------------

/// Independent log-softmax over one slot.
fn log_softmax(row: &[f64], tau: f64) -> Vec<f64> {
    let z: f64 = row.iter().map(|l| (l / tau).exp()).sum();
    row.iter().map(|l| l / tau - z.ln()).collect()
}

fn seq_logp(logits: &[f64], actions_per_slot: usize, tau: f64, actions: &[usize]) -> f64 {
    actions
        .iter()
        .enumerate()
        .map(|(t, &a)| log_softmax(&logits[t * actions_per_slot..(t + 1) * actions_per_slot], tau)[a])
        .sum()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let slots = rng.random_range(1..=5);
        let space = ActionSpace::new(rng.random_range(0..=1));
        let a = space.len();
        let tau = rng.random_range(0.5..2.0);
        let beta = if case % 5 == 0 { 0.0 } else { rng.random_range(0.0..0.5) };
        let mut policy = PolicyParams::uniform(slots, space, tau).map_err(|e| e.to_string())?;
        let mut reference = policy.clone();
        for l in policy.logits_mut() {
            *l = rng.random_range(-1.5..1.5);
        }
        for (r, p) in reference.logits_mut().iter_mut().zip(policy.logits()) {
            *r = p + rng.random_range(-0.7..0.7);
        }

        let m = rng.random_range(1..=6);
        let mut trajectories = Vec::new();
        for _ in 0..m {
            let len = rng.random_range(1..=slots);
            let mut t = Trajectory::from_text("g", "");
            t.actions = (0..len).map(|_| rng.random_range(0..a)).collect();
            trajectories.push(t);
        }
        let rewards: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.1)).collect();
        let mut group = RolloutGroup::new("g", trajectories, rewards).map_err(|e| e.to_string())?;
        let adv = group.compute_advantages().map_err(|e| e.to_string())?.to_vec();
        let report = stepgrpo_objective(&group, &policy, &reference, beta).map_err(|e| e.to_string())?;

        // full objective with the ratio taken against the evaluation point
        let theta0 = policy.logits().to_vec();
        let objective = |theta: &[f64]| -> f64 {
            group
                .trajectories
                .iter()
                .zip(&adv)
                .map(|(t, &ad)| {
                    let lp = seq_logp(theta, a, tau, &t.actions);
                    let lp0 = seq_logp(&theta0, a, tau, &t.actions);
                    let lref = seq_logp(reference.logits(), a, tau, &t.actions);
                    let x = (lref - lp).exp();
                    ad * (lp - lp0).exp() - beta * (x - (lref - lp) - 1.0)
                })
                .sum::<f64>()
                / m as f64
        };
        let value = objective(&theta0);
        check(
            (value - report.surrogate_value).abs() < 1e-9,
            format!("case {case}: surrogate {} vs oracle {value}", report.surrogate_value),
        )?;
        let h = 1e-5;
        let mut fd = vec![0.0; theta0.len()];
        for i in 0..theta0.len() {
            let mut plus = theta0.clone();
            let mut minus = theta0.clone();
            plus[i] += h;
            minus[i] -= h;
            fd[i] = (objective(&plus) - objective(&minus)) / (2.0 * h);
        }
        let diff = fd
            .iter()
            .zip(&report.gradient)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = fd
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(report.gradient.iter().map(|x| x * x).sum::<f64>().sqrt());
        let rel = if scale < 1e-10 { diff } else { diff / scale };
        worst = worst.max(rel);
        check(rel <= 1e-4, format!("case {case}: relative error {rel:e}"))?;
        check(report.kl_value >= 0.0, format!("case {case}: kl {}", report.kl_value))?;
        check(
            (report.kl_value
                - group
                    .trajectories
                    .iter()
                    .map(|t| {
                        kl_from_log_ratio(
                            seq_logp(reference.logits(), a, tau, &t.actions) - seq_logp(&theta0, a, tau, &t.actions),
                        )
                    })
                    .sum::<f64>()
                    / m as f64)
                .abs()
                < 1e-9,
            format!("case {case}: kl value disagrees"),
        )?;
    }
    let took = within(start, Duration::from_secs(10))?;
    Ok(format!("50 policies, worst relative error {worst:.2e} ({took:.2?})"))
}

// 5 ------------------------------------------------------------------------

fn warm_up() -> Outcome {
    let cfg = TrainConfig {
        warmup_iters: 2000,
        warmup_lr: 20.0,
        ..TrainConfig::default()
    };
    let task = generate_task(0, cfg.difficulty);
    let data = gold_dataset(std::slice::from_ref(&task), cfg.slots).map_err(|e| e.to_string())?;
    let start_policy = cfg.initial_policy().map_err(|e| e.to_string())?;
    let fitted = warmup(&start_policy, &data, &cfg).map_err(|e| e.to_string())?;
    let single = nll(&fitted, &data).map_err(|e| e.to_string())?;
    check(single < 1e-3, format!("single-task NLL {single:e}"))?;
    let greedy: Vec<usize> = (0..data[0].1.len()).map(|s| fitted.greedy(s)).collect();
    check(greedy == data[0].1, "policy mode is not the gold sequence")?;

    let mut drops = Vec::new();
    for seed in 0..5 {
        let cfg = TrainConfig {
            seed,
            warmup_iters: 50,
            ..TrainConfig::default()
        };
        let train = gold_dataset(&cfg.tasks(), cfg.slots).map_err(|e| e.to_string())?;
        let held_out = gold_dataset(&cfg.eval_task_set(), cfg.slots).map_err(|e| e.to_string())?;
        let p0 = cfg.initial_policy().map_err(|e| e.to_string())?;
        let before = nll(&p0, &held_out).map_err(|e| e.to_string())?;
        let after =
            nll(&warmup(&p0, &train, &cfg).map_err(|e| e.to_string())?, &held_out).map_err(|e| e.to_string())?;
        check(after < before, format!("seed {seed}: held-out NLL {before} -> {after}"))?;
        drops.push(format!("{before:.2}->{after:.2}"));
    }
    Ok(format!(
        "single-task NLL {single:.1e}; held-out NLL {}",
        drops.join(", ")
    ))
}

// 6 ------------------------------------------------------------------------

fn dense_vs_sparse() -> Outcome {
    let start = Instant::now();
    let mut initial = [0.0; 2];
    let mut finals = [0.0; 2];
    let modes = [RewardMode::StepWise, RewardMode::OutcomeOnly];
    let seeds = 5;
    for seed in 0..seeds {
        for (i, mode) in modes.into_iter().enumerate() {
            let cfg = TrainConfig {
                seed,
                reward_mode: mode,
                difficulty: Difficulty::Two,
                rl_iters: 500,
                ..TrainConfig::default()
            };
            check(
                (cfg.m, cfg.alpha, cfg.beta, cfg.temperature, cfg.warmup_iters) == (4, 0.1, 0.04, 1.2, 0),
                "unexpected defaults",
            )?;
            let out = run(&cfg).map_err(|e| e.to_string())?;
            let start_eval = evaluate(
                &out.initial,
                &cfg.tasks(),
                4000,
                seed,
                Decoding::Sample,
                &cfg.reward_config(),
            )
            .map_err(|e| e.to_string())?;
            initial[i] += start_eval.positive_rate / seeds as f64;
            finals[i] += out.log.rows.last().map_or(0.0, |r| r.eval_success) / seeds as f64;
        }
    }
    let detail = format!(
        "initial positive fraction {:.4} vs {:.4}; final greedy success {:.3} vs {:.3}",
        initial[0], initial[1], finals[0], finals[1]
    );
    check(initial[0] > initial[1], format!("(a) fails: {detail}"))?;
    check(finals[0] - finals[1] >= 0.10, format!("(b) fails: {detail}"))?;
    let took = within(start, Duration::from_secs(300))?;
    Ok(format!("{detail} ({took:.2?})"))
}

// 7 ------------------------------------------------------------------------

/// Independent success rule: the last answer is the correct-answer action,
/// issued after the background with every link derived in order since.
fn oracle_success(space: ActionSpace, actions: &[usize]) -> bool {
    let k = space.key_steps;
    let (mut grounded, mut derived, mut last_answer_ok) = (false, 0usize, None);
    for &a in actions {
        match space.action(a) {
            Some(Action::EmitBackground) => grounded = true,
            Some(Action::EmitKeyStep(j)) => {
                if !grounded || j > derived {
                    derived = 0;
                } else if j == derived {
                    derived += 1;
                }
            }
            Some(Action::EmitDistractorStep) => derived = 0,
            Some(Action::EmitCorrectAnswer) => last_answer_ok = Some(grounded && derived == k),
            Some(Action::EmitWrongAnswer) => last_answer_ok = Some(false),
            Some(Action::Stop) | None => {}
        }
    }
    last_answer_ok == Some(true)
}

/// Exact success probability by enumerating every action sequence.
fn enumerate(policy: &PolicyParams, task: &SyntheticTask) -> Result<f64, String> {
    let space = policy.action_space();
    let stop = space.index(Action::Stop);
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while let Some((prefix, p)) = stack.pop() {
        let finished = prefix.len() == policy.slots() || prefix.last() == Some(&stop);
        if finished {
            mass += p;
            let ok = oracle_success(space, &prefix);
            // the renderer must agree with the oracle on every sequence
            let text = render(task, &prefix, &mut rng);
            let rendered = total_reward(
                &Trajectory::from_text("x", text),
                &task.question,
                &RewardConfig::default(),
            );
            if ok != (rendered.answer_status == stepgrpo::AnswerStatus::Correct) {
                return Err(format!("oracle and renderer disagree on {prefix:?}"));
            }
            if ok {
                total += p;
            }
            continue;
        }
        let probs = policy.probs(prefix.len());
        for (a, q) in probs.iter().enumerate() {
            let mut next = prefix.clone();
            next.push(a);
            stack.push((next, p * q));
        }
    }
    check((mass - 1.0).abs() < 1e-9, format!("enumerated mass {mass}"))?;
    Ok(total)
}

fn lookup_task() -> SyntheticTask {
    SyntheticTask {
        question: Question {
            id: "lookup".into(),
            prompt: "Read the number on the sign.".into(),
            gold_answer: "7".into(),
            key_steps: KeyStepSet::default(),
        },
        template_id: 0,
        difficulty: Difficulty::One,
        chain_values: vec![],
        slip_steps: vec![],
        wrong_answer: "8".into(),
    }
}

fn brute_force_oracle() -> Outcome {
    let episodes = 10_000;
    let mut report = Vec::new();
    // (label, task, random logit scale, extra logit on the gold action per slot)
    for (label, task, logit_scale, tilt) in [
        ("A=5 lookup task", lookup_task(), 1.0, 0.0),
        ("A=7 difficulty-1 task", generate_task(7, Difficulty::One), 1.0, 2.5),
        ("A=7 uniform", generate_task(8, Difficulty::One), 0.0, 0.0),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut policy = PolicyParams::uniform(4, task.action_space(), 1.2).map_err(|e| e.to_string())?;
        for l in policy.logits_mut() {
            *l = logit_scale * rng.random_range(-2.0..2.0);
        }
        let gold = [
            Action::EmitBackground,
            Action::EmitKeyStep(0),
            Action::EmitKeyStep(1),
            Action::EmitCorrectAnswer,
        ];
        if tilt != 0.0 {
            for (slot, a) in gold.into_iter().enumerate() {
                let i = task.action_space().index(a);
                let l = policy.slot_logits(slot)[i];
                policy.set_logit(slot, i, l + tilt);
            }
        }
        let exact = enumerate(&policy, &task)?;
        let sampled = evaluate(
            &policy,
            std::slice::from_ref(&task),
            episodes,
            7,
            Decoding::Sample,
            &RewardConfig::default(),
        )
        .map_err(|e| e.to_string())?
        .success_rate;
        let se = (exact * (1.0 - exact) / episodes as f64).sqrt();
        check(
            (sampled - exact).abs() <= 2.0 * se,
            format!(
                "{label}: sampled {sampled} vs exact {exact:.5} (2 SE = {:.5})",
                2.0 * se
            ),
        )?;
        report.push(format!("{label}: {sampled:.4} vs {exact:.4}"));
    }
    Ok(report.join("; "))
}

// 8 ------------------------------------------------------------------------

fn train_once(config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_stepgrpo"))
        .args(["train", "--config"])
        .arg(config)
        .args(["--seed", "11", "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        status.status.success(),
        format!("train failed: {}", String::from_utf8_lossy(&status.stderr)),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "rl_iters = 60\nwarmup_iters = 3\nwarmup_lr = 0.05\ndifficulty = 2\n",
    )
    .map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_once(&config, &a)?;
    train_once(&config, &b)?;
    for file in ["train_log.csv", "policy.json"] {
        let x = std::fs::read(a.join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(file)).map_err(|e| e.to_string())?;
        check(x == y, format!("{file} differs between runs"))?;
        check(!x.is_empty(), format!("{file} is empty"))?;
    }
    Ok("train_log.csv and policy.json byte-identical across two runs".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("reward exactness", reward_exactness),
        ("advantage normalization", advantage_normalization),
        ("KL estimator", kl_estimator),
        ("gradient fidelity", gradient_fidelity),
        ("warm-up", warm_up),
        ("dense vs sparse rewards", dense_vs_sparse),
        ("brute-force oracle", brute_force_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
