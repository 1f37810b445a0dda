//! `run-iro` and `run-bon`.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use iro_core::analysis::{theorem1_bound, BoundForm, Theorem1Bound, TheoremBoundInputs};
use iro_core::iro::{IroRunner, IterationRecord};
use iro_core::mdp::token_string;
use iro_core::oracle::ExactModel;
use iro_core::search::{bon_generate, CostLedger};
use iro_core::{exec, MdpSpec, RewardSpec, RngStream, Trajectory};
use serde::Serialize;

use crate::artifacts::RunDir;
use crate::config::{self, Loaded};
use crate::UsageError;

#[derive(Serialize)]
struct LedgerRow {
    t: usize,
    tokens_generated: u64,
    value_queries: u64,
    reward_queries: u64,
    nodes_expanded: u64,
    default_value_hits: u64,
    total_tokens_generated: u64,
    total_value_queries: u64,
    total_reward_queries: u64,
}

impl LedgerRow {
    fn new(t: usize, l: &CostLedger, total: &CostLedger) -> Self {
        Self {
            t,
            tokens_generated: l.tokens_generated,
            value_queries: l.value_queries,
            reward_queries: l.reward_queries,
            nodes_expanded: l.nodes_expanded,
            default_value_hits: l.default_value_hits,
            total_tokens_generated: total.tokens_generated,
            total_value_queries: total.value_queries,
            total_reward_queries: total.reward_queries,
        }
    }
}

#[derive(Serialize)]
struct IroSummary {
    iterations: usize,
    optimal_return: Option<f64>,
    base_return: Option<f64>,
    c_st: Option<f64>,
    base_gap: Option<f64>,
    best_gap: Option<f64>,
    final_gap: Option<f64>,
    bound_appendix: Option<Theorem1Bound>,
    bound_main_text: Option<Theorem1Bound>,
    ledger_total: CostLedger,
}

fn load_with_out(path: &Path, out: Option<PathBuf>) -> Result<Loaded> {
    let mut loaded = config::load(path)?;
    if let Some(o) = out {
        loaded.config = loaded.config.resolved(&o);
        loaded.output_dir = o;
    }
    Ok(loaded)
}

fn write_jsonl(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn run_iro(path: &Path, out: Option<PathBuf>, resume: bool) -> Result<()> {
    let Loaded { config: cfg, reward, output_dir } = load_with_out(path, out)?;
    let spec = &cfg.mdp;
    let ck_path = output_dir.join("checkpoint.json");
    let checkpoint = if resume {
        if !ck_path.exists() {
            return Err(UsageError(format!("--resume: no checkpoint at {}", ck_path.display())).into());
        }
        let ck = IroRunner::load_checkpoint(&ck_path)?;
        if ck.config != cfg.iro_config() {
            return Err(UsageError("--resume: checkpoint was written by a different config".into()).into());
        }
        Some(ck)
    } else {
        None
    };
    let mut dir = RunDir::open(&output_dir, "run-iro", cfg.master_seed, &cfg)?;
    let mut runner = match checkpoint {
        Some(ck) => IroRunner::resume(spec, &reward, &cfg.base, ck)?,
        None => IroRunner::new(spec, &reward, &cfg.base, cfg.iro_config())?,
    };

    let records_path = dir.path("records.jsonl");
    let ledger_path = dir.path("ledger.csv");
    let ck_file = dir.path("checkpoint.json");
    for t in 1..=runner.records().len() {
        dir.path(&format!("valuefn_t{t:03}.csv"));
    }
    while !runner.is_done() {
        let r = runner.step()?.clone();
        let t = r.t;
        runner.values()[t - 1].write_csv(&dir.path(&format!("valuefn_t{t:03}.csv")))?;
        write_jsonl(&records_path, runner.records())?;
        runner.save_checkpoint(&ck_file)?;
        match r.exact_gap {
            Some(g) => println!("t={t:>3} beta={:.4} gap={g:.6}", r.beta),
            None => println!("t={t:>3} beta={:.4}", r.beta),
        }
    }
    write_jsonl(&records_path, runner.records())?;
    runner.save_checkpoint(&ck_file)?;

    let mut w = csv::Writer::from_path(&ledger_path)?;
    for r in runner.records() {
        w.serialize(LedgerRow::new(r.t, &r.ledger, &r.ledger_total))?;
    }
    w.flush()?;
    if let Some(d) = runner.last_dataset() {
        d.write_csv(&dir.path("dataset.csv"))?;
    }

    let oracle = runner.oracle();
    let gaps: Vec<f64> = runner.records().iter().filter_map(|r| r.exact_gap).collect();
    let c_st = oracle.and_then(|o| o.c_st);
    let bound = |form| {
        let c = c_st?;
        let cells = spec.tree_node_count()? as f64;
        theorem1_bound(
            &TheoremBoundInputs {
                r_max: spec.r_max,
                horizon: spec.horizon,
                iterations: cfg.iro.iterations,
                c_st: c,
                m: cfg.iro.samples_per_iteration,
                function_class_size: cells,
                delta: 0.1,
            },
            form,
        )
        .ok()
    };
    let summary = IroSummary {
        iterations: runner.records().len(),
        optimal_return: oracle.map(|o| o.optimal_return),
        base_return: oracle.map(|o| o.base_return),
        c_st,
        base_gap: oracle.map(|o| o.optimal_return - o.base_return),
        best_gap: gaps.iter().copied().reduce(f64::min),
        final_gap: gaps.last().copied(),
        bound_appendix: bound(BoundForm::Appendix),
        bound_main_text: bound(BoundForm::MainText),
        ledger_total: runner.records().last().map(|r| r.ledger_total).unwrap_or_default(),
    };
    dir.write_json("summary.json", &summary)?;
    let root = dir.root().to_path_buf();
    dir.finish("complete")?;
    println!("wrote {}", root.display());
    Ok(())
}

#[derive(Serialize)]
struct BonRow {
    run: usize,
    prompt_id: usize,
    tokens: String,
    reward: f64,
    success: Option<bool>,
}

#[derive(Serialize)]
struct BonSummary {
    n: u64,
    runs: usize,
    mean_reward: f64,
    stderr: f64,
    success_rate: Option<f64>,
    optimal_return: Option<f64>,
    ledger: CostLedger,
}

fn needle_hit(spec: &RewardSpec, t: &Trajectory) -> Option<bool> {
    match spec {
        RewardSpec::Needle { target, .. } => Some(&t.tokens == target),
        _ => None,
    }
}

pub fn run_bon(path: &Path, n: u64, out: Option<PathBuf>) -> Result<()> {
    let mut loaded = config::load(path)?;
    let default_dir = {
        let name = loaded
            .output_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        loaded.output_dir.with_file_name(format!("{name}_bon_n{n}"))
    };
    let output_dir = out.unwrap_or(default_dir);
    loaded.config = loaded.config.resolved(&output_dir);
    let Loaded { config: cfg, reward, .. } = loaded;
    let runs = cfg.eval.n_eval;
    if runs == 0 {
        return Err(UsageError("config eval.n_eval must be positive for run-bon".into()).into());
    }
    let spec: &MdpSpec = &cfg.mdp;
    let mut dir = RunDir::open(&output_dir, "run-bon", cfg.master_seed, &cfg)?;
    let master = RngStream::new(cfg.master_seed).derive("bon-eval", n);
    let prompts = spec.num_prompts();
    let outcomes = exec::try_map_indexed(runs, |i| {
        bon_generate(spec, &reward, &cfg.base, n as usize, i % prompts, &master.derive("run", i as u64))
    })
    .context("best-of-n generation")?;

    let mut ledger = CostLedger::default();
    let mut rewards = Vec::with_capacity(runs);
    let mut hits = 0usize;
    let mut w = csv::Writer::from_path(dir.path("bon_runs.csv"))?;
    for (i, o) in outcomes.iter().enumerate() {
        let r = o.reward.context("best-of-n outcome without a reward")?;
        let success = needle_hit(&cfg.reward, &o.trajectory);
        hits += (success == Some(true)) as usize;
        ledger += o.ledger;
        rewards.push(r);
        w.serialize(BonRow {
            run: i,
            prompt_id: o.trajectory.prompt_id,
            tokens: token_string(&o.trajectory.tokens),
            reward: r,
            success,
        })?;
    }
    w.flush()?;
    let mut lw = csv::Writer::from_path(dir.path("ledger.csv"))?;
    lw.serialize(LedgerRow::new(0, &ledger, &ledger))?;
    lw.flush()?;

    let (mean_reward, stderr) = iro_core::iro::mean_stderr(&rewards);
    let optimal_return = if cfg.eval.oracle {
        match ExactModel::new(spec, &reward) {
            Ok(m) => Some(m.optimal_return()),
            Err(iro_core::Error::TooLarge { .. }) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    let summary = BonSummary {
        n,
        runs,
        mean_reward,
        stderr,
        success_rate: needle_hit(&cfg.reward, &outcomes[0].trajectory).map(|_| hits as f64 / runs as f64),
        optimal_return,
        ledger,
    };
    dir.write_json("summary.json", &summary)?;
    println!("mean reward {mean_reward:.6} +/- {stderr:.6} over {runs} runs of BoN-{n}");
    if let Some(s) = summary.success_rate {
        println!("success rate {s:.6}");
    }
    dir.finish("complete")?;
    Ok(())
}
