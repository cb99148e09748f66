//! Step-wise vs outcome-only rewards from a near-uniform start.
//!
//! Usage: `cargo run --release --example compare_modes -- [rl_lr] [group_batch] [rl_iters] [seeds]`

use stepgrpo::{evaluate, run, Decoding, RewardConfig, RewardMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base = TrainConfig::default();
    let rl_lr = args.first().map(|s| s.parse()).transpose()?.unwrap_or(base.rl_lr);
    let group_batch = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(base.group_batch);
    let rl_iters = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(base.rl_iters);
    let seeds: u64 = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(5);

    for mode in [RewardMode::StepWise, RewardMode::OutcomeOnly] {
        let (mut initial, mut fin) = (0.0, 0.0);
        let mut per_seed = Vec::new();
        for seed in 0..seeds {
            let cfg = TrainConfig {
                seed,
                reward_mode: mode,
                rl_lr,
                group_batch,
                rl_iters,
                ..base.clone()
            };
            let out = run(&cfg)?;
            let reward = RewardConfig { alpha: cfg.alpha, mode };
            let start = evaluate(&out.initial, &cfg.tasks(), 2000, seed, Decoding::Sample, &reward)?;
            let end = evaluate(
                &out.policy,
                &cfg.eval_task_set(),
                cfg.eval_tasks,
                seed,
                Decoding::Greedy,
                &reward,
            )?;
            initial += start.positive_rate;
            fin += end.success_rate;
            per_seed.push(end.success_rate);
        }
        let n = seeds as f64;
        println!(
            "{mode:>9}: initial positive {:.4}  final greedy success {:.3}  {per_seed:?}",
            initial / n,
            fin / n
        );
    }
    Ok(())
}
