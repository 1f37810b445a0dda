//! `compare-cost`: closed-form cost ratios, measured ledgers, node counts
//! and optional Monte Carlo success rates at the matched budget.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use iro_core::analysis::{
    bon_success_prob, budget_matched_comparison, cost_comparison, fig3_node_counts, iro_success_prob,
    measured_prop1_ratios, CostComparison, LedgerRatios, NodeCounts,
};
use serde::Serialize;

use crate::artifacts::RunDir;
use crate::UsageError;

/// Node counting enumerates the whole tree; skip it beyond this many leaves.
const NODE_COUNT_LEAVES: u128 = 1 << 16;
/// Ledger measurement runs one BoN-N; skip it beyond this many tokens.
const LEDGER_TOKENS: u128 = 1 << 24;

#[derive(Args, Clone, Debug, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub vocab: usize,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long)]
    pub chunk: usize,
    #[arg(long)]
    pub beam: usize,
    #[arg(long)]
    pub succ: usize,
    #[arg(long, default_value_t = 1)]
    pub valuefns: usize,
    /// Monte Carlo trials for the measured success rates.
    #[arg(long)]
    pub empirical: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the JSON and CSV outputs; stdout only when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Empirical {
    trials: u64,
    iro_successes: u64,
    bon_successes: u64,
    iro_rate: f64,
    bon_rate: f64,
    z_iro_vs_bon: f64,
    z_iro_vs_closed: f64,
    z_bon_vs_closed: f64,
    measured_token_ratio: f64,
}

#[derive(Serialize)]
struct Output<'a> {
    params: &'a CompareArgs,
    comparison: CostComparison,
    bon_success: f64,
    iro_success: f64,
    nodes: Option<NodeCounts>,
    ledger: Option<LedgerRatios>,
    empirical: Option<Empirical>,
}

#[derive(Serialize)]
struct CsvRow {
    vocab: usize,
    horizon: usize,
    chunk: usize,
    beam: usize,
    succ: usize,
    valuefns: usize,
    u: u64,
    n: u128,
    bon_c_token: u128,
    iro_c_token: u128,
    bon_c_query: u128,
    iro_c_query: u128,
    token_ratio: f64,
    query_ratio: f64,
    bon_success: f64,
    iro_success: f64,
    bon_success_measured: Option<f64>,
    iro_success_measured: Option<f64>,
    trials: Option<u64>,
}

pub fn compare_cost(a: &CompareArgs) -> Result<()> {
    if a.vocab < 2 || a.horizon == 0 || a.beam == 0 || a.succ == 0 || a.valuefns == 0 {
        return Err(UsageError("vocab must be >= 2 and horizon, beam, succ, valuefns positive".into()).into());
    }
    if a.chunk == 0 || a.chunk > a.horizon || a.horizon % a.chunk != 0 {
        return Err(UsageError(format!("chunk {} must divide horizon {}", a.chunk, a.horizon)).into());
    }
    let comparison = cost_comparison(a.horizon, a.chunk, a.valuefns, a.succ, a.beam)?;
    let n = comparison.bon.n;
    let bon_success = bon_success_prob(a.vocab, a.horizon, n.min(u64::MAX as u128) as u64, true);
    let iro_success = iro_success_prob(a.vocab, comparison.iro.u, a.horizon, a.chunk)?;
    let leaves = (a.vocab as u128).checked_pow(a.horizon as u32);
    let nodes = match leaves {
        Some(l) if l <= NODE_COUNT_LEAVES => Some(fig3_node_counts(a.vocab, a.horizon)?),
        _ => None,
    };
    let ledger = if n.saturating_mul(a.horizon as u128) <= LEDGER_TOKENS && leaves.is_some_and(|l| l <= NODE_COUNT_LEAVES) {
        Some(measured_prop1_ratios(a.vocab, a.horizon, a.chunk, a.valuefns, a.succ, a.beam, a.seed)?)
    } else {
        None
    };
    let empirical = match a.empirical {
        Some(trials) => {
            let r = budget_matched_comparison(a.vocab, a.horizon, a.chunk, a.beam, a.succ, a.valuefns, trials, a.seed)?;
            Some(Empirical {
                trials,
                iro_successes: r.iro_successes,
                bon_successes: r.bon_successes,
                iro_rate: r.iro_rate,
                bon_rate: r.bon_rate,
                z_iro_vs_bon: r.z_iro_vs_bon,
                z_iro_vs_closed: r.z_iro_vs_closed,
                z_bon_vs_closed: r.z_bon_vs_closed,
                measured_token_ratio: r.measured_token_ratio(),
            })
        }
        None => None,
    };
    let out = Output {
        params: a,
        comparison,
        bon_success,
        iro_success,
        nodes,
        ledger,
        empirical,
    };
    let json = serde_json::to_string_pretty(&out)?;
    println!("{json}");

    if let Some(root) = &a.out {
        let mut dir = RunDir::open(root, "compare-cost", a.seed, a)?;
        dir.write("cost_comparison.json", format!("{json}\n").as_bytes())?;
        let c = &out.comparison;
        let mut w = csv::Writer::from_path(dir.path("cost_comparison.csv"))?;
        w.serialize(CsvRow {
            vocab: a.vocab,
            horizon: a.horizon,
            chunk: a.chunk,
            beam: a.beam,
            succ: a.succ,
            valuefns: a.valuefns,
            u: c.iro.u,
            n: c.bon.n,
            bon_c_token: c.bon.c_token,
            iro_c_token: c.iro.c_token,
            bon_c_query: c.bon.c_query,
            iro_c_query: c.iro.c_query,
            token_ratio: c.ratios.token_ratio,
            query_ratio: c.ratios.query_ratio,
            bon_success,
            iro_success,
            bon_success_measured: out.empirical.as_ref().map(|e| e.bon_rate),
            iro_success_measured: out.empirical.as_ref().map(|e| e.iro_rate),
            trials: a.empirical,
        })?;
        w.flush()?;
        dir.finish("complete")?;
    }
    Ok(())
}
