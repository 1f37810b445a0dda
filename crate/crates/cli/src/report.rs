//! `report`: plot-ready series from a finished run directory. Outputs go
//! to `<run>/report/` and depend only on the run's files, so re-running is
//! byte-identical.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use iro_core::analysis::{bon_success_prob, iro_success_prob, match_budget};
use iro_core::iro::IterationRecord;
use serde::Serialize;

use crate::artifacts::{read_manifest, verify_manifest};
use crate::config::ExperimentConfig;
use crate::UsageError;

#[derive(Serialize)]
struct IterationRow {
    t: usize,
    beta: f64,
    train_mean_reward: Option<f64>,
    mc_mean: Option<f64>,
    mc_stderr: Option<f64>,
    exact_return: Option<f64>,
    exact_gap: Option<f64>,
    total_tokens_generated: u64,
    total_value_queries: u64,
    total_reward_queries: u64,
}

#[derive(Serialize)]
struct BudgetRow {
    u: u64,
    n: u128,
    iro_success: f64,
    bon_success_same_n: f64,
    /// BoN with the token budget of the guided search (`N = U`).
    bon_success_same_tokens: f64,
}

#[derive(Serialize)]
struct Series {
    iterations: Vec<usize>,
    reward: Vec<Option<f64>>,
    exact_return: Vec<Option<f64>>,
    gap: Vec<Option<f64>>,
}

pub fn report(run: &Path) -> Result<()> {
    if !run.is_dir() {
        return Err(UsageError(format!("run directory {} does not exist", run.display())).into());
    }
    let manifest = read_manifest(run)?;
    let stale = verify_manifest(run)?;
    if !stale.is_empty() {
        anyhow::bail!("checksum mismatch in {}: {}", run.display(), stale.join(", "));
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(manifest.config.clone()).context("manifest config does not parse")?;
    let text = fs::read_to_string(run.join("records.jsonl")).context("reading records.jsonl")?;
    let records: Vec<IterationRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .context("parsing records.jsonl")?;

    let out = run.join("report");
    fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join("iterations.csv"))?;
    for r in &records {
        w.serialize(IterationRow {
            t: r.t,
            beta: r.beta,
            train_mean_reward: r.train_mean_reward,
            mc_mean: r.mc_mean,
            mc_stderr: r.mc_stderr,
            exact_return: r.exact_return,
            exact_gap: r.exact_gap,
            total_tokens_generated: r.ledger_total.tokens_generated,
            total_value_queries: r.ledger_total.value_queries,
            total_reward_queries: r.ledger_total.reward_queries,
        })?;
    }
    w.flush()?;

    let series = Series {
        iterations: records.iter().map(|r| r.t).collect(),
        reward: records.iter().map(|r| r.mc_mean.or(r.train_mean_reward)).collect(),
        exact_return: records.iter().map(|r| r.exact_return).collect(),
        gap: records.iter().map(|r| r.exact_gap).collect(),
    };
    fs::write(out.join("series.json"), serde_json::to_string_pretty(&series)? + "\n")?;

    // success probability against the live-candidate budget U for this
    // instance's shape, under the single-optimum model
    let (a, h, l) = (cfg.mdp.vocab_size, cfg.mdp.horizon, cfg.iro.search.chunk_length);
    let mut w = csv::Writer::from_path(out.join("success_vs_budget.csv"))?;
    for u in 1..=64u64 {
        let Ok(n) = match_budget(u, h, l) else { break };
        w.serialize(BudgetRow {
            u,
            n,
            iro_success: iro_success_prob(a, u, h, l)?,
            bon_success_same_n: bon_success_prob(a, h, n.min(u64::MAX as u128) as u64, true),
            bon_success_same_tokens: bon_success_prob(a, h, u, true),
        })?;
    }
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}
