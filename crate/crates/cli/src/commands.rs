use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stepgrpo::io::{read_jsonl, write_jsonl, AnswerRecord, KeyStepRecord, RewardRecord, TrajectoryRecord};
use stepgrpo::trainer::TrainLog;
use stepgrpo::{evaluate, run, Decoding, Difficulty, KeyStepSet, RewardConfig, RewardMode, TrainConfig, Trajectory};

use crate::error::{CliError, CliResult};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::TrainingFlags;

pub const THREADS_ENV: &str = "STEPGRPO_THREADS";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub trajectories: PathBuf,
    pub key_steps: PathBuf,
    pub answers: PathBuf,
    pub alpha: f64,
    pub reward_mode: RewardMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareOptions {
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub primary: RewardMode,
    pub baseline: RewardMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TasksOptions {
    pub difficulty: u8,
    pub count: usize,
    pub seed: u64,
}

fn load_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    read_jsonl(BufReader::new(file)).map_err(|e| CliError::input(path, e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::output(path, e))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("options serialize")
}

pub fn score(opts: ScoreOptions, out: Option<&Path>) -> CliResult<()> {
    if !(opts.alpha.is_finite() && opts.alpha >= 0.0) {
        return Err(CliError::Usage(format!(
            "alpha must be finite and >= 0, got {}",
            opts.alpha
        )));
    }
    let trajectories: Vec<TrajectoryRecord> = load_jsonl(&opts.trajectories)?;
    let key_records: Vec<KeyStepRecord> = load_jsonl(&opts.key_steps)?;
    let answer_records: Vec<AnswerRecord> = load_jsonl(&opts.answers)?;
    let key_steps: HashMap<String, KeyStepSet> =
        key_records.into_iter().map(|r| (r.question_id, r.key_steps)).collect();
    let answers: HashMap<String, String> = answer_records
        .into_iter()
        .map(|r| (r.question_id, r.gold_answer))
        .collect();

    let cfg = RewardConfig {
        alpha: opts.alpha,
        mode: opts.reward_mode,
    };
    let empty = KeyStepSet::default();
    let mut warned = HashSet::new();
    let mut records = Vec::with_capacity(trajectories.len());
    for (line, rec) in trajectories.iter().enumerate() {
        let gold = answers.get(&rec.question_id).ok_or_else(|| {
            CliError::input(
                &opts.trajectories,
                format!("line {}: no gold answer for question {:?}", line + 1, rec.question_id),
            )
        })?;
        let steps = key_steps.get(&rec.question_id).unwrap_or_else(|| {
            if warned.insert(rec.question_id.clone()) {
                eprintln!(
                    "warning: no key steps for question {:?}; scoring with none",
                    rec.question_id
                );
            }
            &empty
        });
        let question = stepgrpo::Question {
            id: rec.question_id.clone(),
            prompt: String::new(),
            gold_answer: gold.clone(),
            key_steps: steps.clone(),
        };
        let traj = Trajectory::from_text(rec.question_id.clone(), rec.text.clone());
        let r = stepgrpo::total_reward(&traj, &question, &cfg);
        records.push(RewardRecord::new(rec.question_id.clone(), &r));
    }

    let mean = |f: fn(&RewardRecord) -> f64| {
        let n = records.len().max(1) as f64;
        records.iter().map(f).fold(0.0, |a, b| a + b) / n
    };
    let summary = format!(
        "scored {} trajectories: mean_total={:.6} mean_k={:.6} structure_rate={:.6}",
        records.len(),
        mean(|r| r.total),
        mean(|r| r.k),
        mean(|r| if r.r_val == 1.0 { 1.0 } else { 0.0 }),
    );

    match out {
        None => {
            let stdout = io::stdout().lock();
            write_jsonl(stdout, &records).map_err(|e| CliError::Usage(format!("stdout: {e}")))?;
            eprintln!("{summary}");
        }
        Some(dir) => {
            create_dir(dir)?;
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &records).expect("in-memory write");
            write_file(&dir.join("rewards.jsonl"), &buf)?;
            let mut manifest = RunManifest::new("score", to_json(&opts), None);
            for p in [&opts.trajectories, &opts.key_steps, &opts.answers] {
                manifest.add_input(p)?;
            }
            manifest.add_output(dir, "rewards.jsonl")?;
            manifest.write(dir)?;
            println!("{summary}");
        }
    }
    Ok(())
}

/// Defaults, then the TOML file, then individual flags.
pub fn resolve_config(flags: &TrainingFlags) -> CliResult<TrainConfig> {
    let mut cfg = match &flags.config {
        None => TrainConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.reward_mode {
        cfg.reward_mode = v;
    }
    if let Some(v) = flags.m {
        cfg.m = v;
    }
    if let Some(v) = flags.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = flags.beta {
        cfg.beta = v;
    }
    if let Some(v) = flags.temperature {
        cfg.temperature = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(cfg: &TrainConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let output = run(cfg)?;
    create_dir(out)?;
    write_file(&out.join("train_log.csv"), output.log.to_csv().as_bytes())?;
    let mut policy_json = serde_json::to_string_pretty(&output.policy).expect("policy serializes");
    policy_json.push('\n');
    write_file(&out.join("policy.json"), policy_json.as_bytes())?;

    let mut manifest = RunManifest::new("train", to_json(cfg), Some(cfg.seed));
    manifest.add_output(out, "train_log.csv")?;
    manifest.add_output(out, "policy.json")?;
    manifest.write(out)?;

    let eval = evaluate(
        &output.policy,
        &cfg.eval_task_set(),
        cfg.eval_tasks,
        cfg.seed,
        Decoding::Greedy,
        &cfg.reward_config(),
    )?;
    println!(
        "{} iterations ({} reward): greedy success {:.3}, mean reward {:.4}, structure rate {:.3}; wrote {}",
        cfg.rl_iters,
        cfg.reward_mode,
        eval.success_rate,
        eval.mean_reward,
        eval.structure_rate,
        out.display()
    );
    Ok(())
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn compare(opts: &CompareOptions, out: &Path) -> CliResult<()> {
    if opts.seeds.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two seeds, got {}",
            opts.seeds.len()
        )));
    }
    opts.config.validate()?;
    let jobs: Vec<TrainConfig> = opts
        .seeds
        .iter()
        .flat_map(|&seed| {
            [opts.primary, opts.baseline].map(|reward_mode| TrainConfig {
                seed,
                reward_mode,
                ..opts.config.clone()
            })
        })
        .collect();
    let logs: Vec<TrainLog> = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|cfg| run(cfg).map(|o| o.log))
            .collect::<Result<_, _>>()
    })?;
    let (primary, baseline): (Vec<&TrainLog>, Vec<&TrainLog>) = (
        logs.iter().step_by(2).collect(),
        logs.iter().skip(1).step_by(2).collect(),
    );

    let mut csv = String::from("iteration,primary_mean,primary_std,baseline_mean,baseline_std\n");
    for i in 0..opts.config.rl_iters {
        let p: Vec<f64> = primary.iter().map(|l| l.rows[i].eval_success).collect();
        let b: Vec<f64> = baseline.iter().map(|l| l.rows[i].eval_success).collect();
        let (pm, ps) = mean_std(&p);
        let (bm, bs) = mean_std(&b);
        csv.push_str(&format!("{i},{pm},{ps},{bm},{bs}\n"));
    }
    let final_of = |logs: &[&TrainLog]| -> Vec<f64> {
        logs.iter()
            .map(|l| l.rows.last().map_or(0.0, |r| r.eval_success))
            .collect()
    };
    let (pf, bf) = (final_of(&primary), final_of(&baseline));
    let mut finals = String::from("seed,primary_final,baseline_final\n");
    for (i, seed) in opts.seeds.iter().enumerate() {
        finals.push_str(&format!("{seed},{},{}\n", pf[i], bf[i]));
    }

    create_dir(out)?;
    write_file(&out.join("compare.csv"), csv.as_bytes())?;
    write_file(&out.join("final.csv"), finals.as_bytes())?;
    let mut manifest = RunManifest::new("compare", to_json(opts), None);
    manifest.add_output(out, "compare.csv")?;
    manifest.add_output(out, "final.csv")?;
    manifest.write(out)?;

    let (pm, ps) = mean_std(&pf);
    let (bm, bs) = mean_std(&bf);
    println!(
        "final greedy success over {} seeds: {} {pm:.3} (std {ps:.3}) vs {} {bm:.3} (std {bs:.3}); delta {:+.3}",
        opts.seeds.len(),
        opts.primary,
        opts.baseline,
        pm - bm
    );
    Ok(())
}

pub fn tasks(opts: &TasksOptions, out: Option<&Path>) -> CliResult<()> {
    let difficulty = Difficulty::try_from(opts.difficulty)?;
    let cfg = TrainConfig {
        seed: opts.seed,
        difficulty,
        task_count: opts.count,
        ..TrainConfig::default()
    };
    let tasks = cfg.tasks();
    match out {
        None => write_jsonl(io::stdout().lock(), &tasks).map_err(|e| CliError::Usage(format!("stdout: {e}")))?,
        Some(dir) => {
            create_dir(dir)?;
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &tasks).expect("in-memory write");
            write_file(&dir.join("tasks.jsonl"), &buf)?;
            let mut manifest = RunManifest::new("tasks", to_json(opts), Some(opts.seed));
            manifest.add_output(dir, "tasks.jsonl")?;
            manifest.write(dir)?;
        }
    }
    Ok(())
}

fn options<T: DeserializeOwned>(manifest: &RunManifest, path: &Path) -> CliResult<T> {
    serde_json::from_value(manifest.config.clone()).map_err(|e| CliError::input(path, format!("config: {e}")))
}

pub fn reproduce(manifest_path: &Path, out: &Path) -> CliResult<()> {
    let original = RunManifest::read(manifest_path)?;
    if out.join(MANIFEST_FILE) == manifest_path {
        return Err(CliError::Usage(
            "--out must differ from the manifest's directory".into(),
        ));
    }
    for input in &original.inputs {
        let now = crate::manifest::sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(CliError::input(
                &input.path,
                "input changed since the manifest was written",
            ));
        }
    }
    match original.command.as_str() {
        "score" => score(options(&original, manifest_path)?, Some(out))?,
        "train" => train(&options(&original, manifest_path)?, out)?,
        "compare" => compare(&options(&original, manifest_path)?, out)?,
        "tasks" => tasks(&options(&original, manifest_path)?, Some(out))?,
        other => return Err(CliError::input(manifest_path, format!("unknown command {other:?}"))),
    }
    let rerun = RunManifest::read(&out.join(MANIFEST_FILE))?;
    let mut mismatched = Vec::new();
    for (a, b) in original.outputs.iter().zip(&rerun.outputs) {
        if a != b {
            mismatched.push(a.path.display().to_string());
        }
    }
    if !mismatched.is_empty() || original.outputs.len() != rerun.outputs.len() {
        return Err(CliError::Input(format!("outputs differ: {}", mismatched.join(", "))));
    }
    let mut stdout = io::stdout().lock();
    let _ = writeln!(
        stdout,
        "reproduced {} output(s) byte-for-byte in {}",
        rerun.outputs.len(),
        out.display()
    );
    Ok(())
}
