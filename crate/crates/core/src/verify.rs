//! Property suites run by `iro verify`. Each suite returns one row per
//! property with the measured value; informational rows report curves that
//! are not asserted.

use rand::Rng;
use serde::Serialize;

use crate::analysis::{
    bon_success_prob, budget_matched_comparison, fig3_node_counts, gap_decomposition, gold_stack,
    iro_success_prob, lemma_b5_check, measured_prop1_ratios, prop1_ratios, theorem1_bound, welch_t_test,
    BoundForm, TheoremBoundInputs,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::iro::{run_iro, BetaSchedule, IroConfig};
use crate::mdp::{enumerate_trajectories, token_string, MdpSpec, Reward, RewardSpec, DEFAULT_ENUMERATION_CAP};
use crate::oracle::{visitation, ExactModel};
use crate::policy::{exact_npg_step, kl_objective_optimality_report, BasePolicy};
use crate::rng::RngStream;
use crate::search::{bon_generate, guided_generate, sample_rollout, SearchConfig};
use crate::value_fn::{expected_fit_in, fit, fit_tabular_weighted, weighted_enumeration, FitDataset, ValueFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub status: Status,
    pub measured: String,
}

impl Check {
    fn assert(suite: &str, name: impl Into<String>, ok: bool, measured: String) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            measured,
        }
    }

    fn info(suite: &str, name: impl Into<String>, measured: String) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            status: Status::Info,
            measured,
        }
    }
}

pub const SUITES: &[&str] = &[
    "kl-closed-form",
    "policy-iteration",
    "value-fit",
    "gap-decomposition",
    "lemma-b5",
    "performance-difference",
    "visitation",
    "search-ledger",
    "budget-matching",
    "success-probability",
    "theorem-bound",
    "degeneration",
    "theorem-trend",
];

pub fn is_known_suite(name: &str) -> bool {
    name == "all" || SUITES.contains(&name)
}

pub fn run_suite(name: &str, seed: u64) -> Result<Vec<Check>> {
    let stream = RngStream::new(seed).derive(name, 0);
    match name {
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, seed)?);
            }
            Ok(out)
        }
        "kl-closed-form" => kl_closed_form(&stream),
        "policy-iteration" => policy_iteration(&stream),
        "value-fit" => value_fit(&stream),
        "gap-decomposition" => gap_suite(&stream),
        "lemma-b5" => lemma_b5(&stream),
        "performance-difference" => performance_difference(&stream),
        "visitation" => visitation_suite(&stream),
        "search-ledger" => search_ledger(&stream),
        "budget-matching" => budget_matching(&stream),
        "success-probability" => success_probability(&stream),
        "theorem-bound" => theorem_bound(),
        "degeneration" => degeneration(&stream),
        "theorem-trend" => theorem_trend(seed),
        _ => Err(Error::InvalidConfig(format!(
            "unknown suite '{name}'; expected all or one of: {}",
            SUITES.join(", ")
        ))),
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.status != Status::Fail)
}

/// Leaf rewards uniform in `[0, 0.9]` except one leaf worth 1, so the
/// optimal trajectory is unique with a margin of at least 0.1. The base is a
/// full-support seeded softmax.
pub fn margin_instance(vocab: usize, horizon: usize, stream: &RngStream) -> Result<(MdpSpec, Reward, BasePolicy)> {
    let spec = MdpSpec::new(vocab, horizon)?;
    let mut rng = stream.rng();
    let leaves: Vec<_> = enumerate_trajectories(&spec, 0, DEFAULT_ENUMERATION_CAP)?.collect();
    let star = rng.gen_range(0..leaves.len());
    let entries = leaves
        .iter()
        .enumerate()
        .map(|(i, t)| (token_string(&t.tokens), if i == star { 1.0 } else { 0.9 * rng.gen::<f64>() }))
        .collect();
    let reward = Reward::new(&RewardSpec::ExplicitTable { entries, default_value: 0.0 }, &spec)?;
    let base = BasePolicy::SeededLogits {
        seed: rng.gen(),
        temperature: 1.0,
    };
    Ok((spec, reward, base))
}

/// Hash-leaf rewards with a seeded softmax base at a random temperature.
fn hash_instance(vocab: usize, horizon: usize, stream: &RngStream) -> Result<(MdpSpec, Reward, BasePolicy)> {
    let spec = MdpSpec::new(vocab, horizon)?;
    let mut rng = stream.rng();
    let reward = Reward::new(&RewardSpec::HashLeaf { seed: rng.gen(), scale: 1.0 }, &spec)?;
    let base = BasePolicy::SeededLogits {
        seed: rng.gen(),
        temperature: rng.gen_range(0.3..3.0),
    };
    Ok((spec, reward, base))
}

fn kl_closed_form(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "kl-closed-form";
    let draws = 100;
    let reports = exec::map_indexed(draws, |i| {
        let mut rng = stream.derive("draw", i as u64).rng();
        let n = rng.gen_range(2..=6);
        let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = e.iter().sum();
        let pi_ref: Vec<f64> = e.iter().map(|x| x / s).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta = 10f64.powf(rng.gen_range(-1.3..0.7));
        kl_objective_optimality_report(&pi_ref, &q, beta, 200, &mut rng)
    });
    let passed = reports.iter().filter(|r| r.passed(1e-6)).count();
    let min_margin = reports.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let max_numeric_gap = reports
        .iter()
        .map(|r| r.closed_form_value - r.numeric_value)
        .fold(0.0, f64::max);
    Ok(vec![
        Check::assert(
            S,
            "closed form maximizes the KL-regularized objective (tol 1e-6)",
            passed == draws,
            format!("{passed}/{draws} draws, min margin {min_margin:.3e}"),
        ),
        Check::info(
            S,
            "numeric simplex maximizer shortfall",
            format!("max {max_numeric_gap:.3e}"),
        ),
    ])
}

fn policy_iteration(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "policy-iteration";
    let instances = 20;
    let beta = 0.1;
    let results = exec::try_map_indexed(instances, |i| -> Result<(f64, Option<usize>, f64)> {
        let (spec, reward, base) = margin_instance(3, 4, &stream.derive("instance", i as u64))?;
        let model = ExactModel::new(&spec, &reward)?;
        let j_star = model.optimal_return();
        let mut pi = model.tabulate(&base)?.to_explicit(model.tree());
        let mut j_prev = model.exact_return(&model.tabulate(&pi)?);
        let mut worst_drop: f64 = 0.0;
        let mut hit = None;
        for it in 1..=50 {
            pi = exact_npg_step(&spec, &reward, &pi, beta)?;
            let j = model.exact_return(&model.tabulate(&pi)?);
            worst_drop = worst_drop.max(j_prev - j);
            if hit.is_none() && j_star - j < 1e-6 {
                hit = Some(it);
            }
            j_prev = j;
        }
        Ok((worst_drop, hit, j_star - j_prev))
    })?;
    let monotone = results.iter().filter(|r| r.0 <= 1e-12).count();
    let converged = results.iter().filter(|r| r.1.is_some()).count();
    let slowest = results.iter().filter_map(|r| r.1).max().unwrap_or(0);
    let worst = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let final_gap = results.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(vec![
        Check::assert(
            S,
            "exact NPG steps never decrease J (beta 0.1, tol 1e-12)",
            monotone == instances,
            format!("{monotone}/{instances} instances, largest drop {worst:.3e}"),
        ),
        Check::assert(
            S,
            "gap below 1e-6 within 50 steps",
            converged == instances,
            format!("{converged}/{instances} instances, slowest {slowest} steps, final gap {final_gap:.3e}"),
        ),
    ])
}

/// RMS error of a Monte Carlo tabular fit at prefixes seen at least 50
/// times, pooled over `reps` replicates.
fn mc_fit_rmse(
    spec: &MdpSpec,
    reward: &Reward,
    base: &BasePolicy,
    model: &ExactModel,
    exact: &[f64],
    m: usize,
    reps: usize,
    stream: &RngStream,
) -> Result<f64> {
    let tree = model.tree();
    let per_rep = exec::try_map_indexed(reps, |r| -> Result<(f64, usize)> {
        let rs = stream.derive("rep", r as u64);
        let mut items = Vec::with_capacity(m);
        for i in 0..m {
            let tau = sample_rollout(spec, base, 0, &rs.derive("item", i as u64))?;
            let score = reward.evaluate(spec, &tau)?;
            items.push(crate::mdp::ScoredTrajectory { trajectory: tau, reward: score });
        }
        let v = fit(spec, &FitDataset::new(items, 0), &Default::default())?;
        let (mut sq, mut n) = (0.0, 0);
        for node in 0..tree.len() {
            if let Some(e) = v.entry(&tree.prefix(node)) {
                if e.count >= 50 {
                    sq += (e.mean - exact[node]).powi(2);
                    n += 1;
                }
            }
        }
        Ok((sq, n))
    })?;
    let (sq, n) = per_rep.iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((sq / n.max(1) as f64).sqrt())
}

fn value_fit(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "value-fit";
    let shapes = [(2, 3), (3, 3), (3, 4), (2, 5), (4, 3)];
    let diffs = exec::try_map_indexed(shapes.len(), |i| -> Result<f64> {
        let (a, h) = shapes[i];
        let (spec, reward, base) = hash_instance(a, h, &stream.derive("enumeration", i as u64))?;
        let model = ExactModel::new(&spec, &reward)?;
        let pi = model.tabulate(&base)?;
        let exact = model.policy_values(&pi);
        let v = fit_tabular_weighted(&weighted_enumeration(&model, &pi)?)?;
        let tree = model.tree();
        let mut worst: f64 = 0.0;
        for node in 0..tree.len() {
            match v.entry(&tree.prefix(node)) {
                Some(e) => worst = worst.max((e.mean - exact[node]).abs()),
                None => worst = f64::INFINITY,
            }
        }
        Ok(worst)
    })?;
    let worst = diffs.iter().copied().fold(0.0, f64::max);

    let (spec, reward, _) = hash_instance(2, 3, &stream.derive("mc", 0))?;
    let base = BasePolicy::SeededLogits { seed: 11, temperature: 1.0 };
    let model = ExactModel::new(&spec, &reward)?;
    let exact = model.policy_values(&model.tabulate(&base)?);
    let ms = [1000, 4000, 16000];
    let mut rmse = Vec::new();
    for &m in &ms {
        rmse.push(mc_fit_rmse(&spec, &reward, &base, &model, &exact, m, 200, &stream.derive("mc", m as u64))?);
    }
    let r1 = rmse[1] / rmse[0];
    let r2 = rmse[2] / rmse[1];
    let in_band = |r: f64| (0.35..=0.65).contains(&r);
    Ok(vec![
        Check::assert(
            S,
            "weighted enumeration fit equals exact V^pi at every prefix (tol 1e-10)",
            worst <= 1e-10,
            format!("max abs error {worst:.3e} over {} instances", shapes.len()),
        ),
        Check::assert(
            S,
            "Monte Carlo fit error halves when m quadruples (0.5 +/- 30%)",
            in_band(r1) && in_band(r2),
            format!(
                "rmse {:.4e} / {:.4e} / {:.4e} at m = 1000 / 4000 / 16000, ratios {r1:.3} {r2:.3}",
                rmse[0], rmse[1], rmse[2]
            ),
        ),
    ])
}

fn gap_suite(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "gap-decomposition";
    let instances = 50;
    let rows = exec::try_map_indexed(instances, |i| -> Result<[f64; 4]> {
        let s = stream.derive("instance", i as u64);
        let (spec, reward, base) = hash_instance(2 + i % 2, 2 + i % 3, &s)?;
        let model = ExactModel::new(&spec, &reward)?;
        let tree = model.tree();
        let pi_star = model.optimal_policy();
        let pi_hat = model.tabulate(&base)?;
        let mut rng = s.derive("v_hat", 0).rng();
        let noisy = ValueFn::from_means((0..tree.len()).map(|n| (tree.prefix(n), rng.gen::<f64>())).collect());
        let d = gap_decomposition(&model, &pi_star, &pi_hat, &noisy);
        let exact = gap_decomposition(&model, &pi_star, &pi_hat, &expected_fit_in(&model, &pi_hat));
        let same = gap_decomposition(&model, &pi_star, &pi_star, &noisy);
        Ok([
            (d.eps1 + d.eps2 - d.gap).abs(),
            exact.eps2.abs(),
            (exact.eps1 - exact.gap).abs(),
            same.eps1.abs().max(same.eps2.abs()).max(same.gap.abs()),
        ])
    })?;
    let col = |k: usize| rows.iter().map(|r| r[k]).fold(0.0, f64::max);
    Ok(vec![
        Check::assert(
            S,
            "eps1 + eps2 = J(pi*) - J(pi_hat) (tol 1e-10)",
            col(0) <= 1e-10,
            format!("max residual {:.3e} over {instances} instances", col(0)),
        ),
        Check::assert(
            S,
            "exact Q estimate gives eps2 = 0 and eps1 = gap (tol 1e-10)",
            col(1) <= 1e-10 && col(2) <= 1e-10,
            format!("max |eps2| {:.3e}, max |eps1 - gap| {:.3e}", col(1), col(2)),
        ),
        Check::assert(
            S,
            "pi_hat = pi* gives all three terms zero",
            col(3) <= 1e-12,
            format!("max {:.3e}", col(3)),
        ),
    ])
}

fn lemma_b5(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "lemma-b5";
    let instances = 30;
    let rows = exec::try_map_indexed(instances, |i| -> Result<(bool, f64)> {
        let (spec, reward, base) = hash_instance(2 + i % 3, 2 + i % 3, &stream.derive("instance", i as u64))?;
        let model = ExactModel::new(&spec, &reward)?;
        let l = lemma_b5_check(&model, &model.tabulate(&base)?)?;
        Ok((l.holds, if l.bound > 0.0 { l.kl_sum / l.bound } else { 0.0 }))
    })?;
    let held = rows.iter().filter(|r| r.0).count();
    let tightest = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(vec![Check::assert(
        S,
        "sum of E_{d*} KL(pi* || pi_base) <= H log C_ST",
        held == instances,
        format!("{held}/{instances} instances, largest ratio {tightest:.4}"),
    )])
}

fn performance_difference(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "performance-difference";
    let instances = 30;
    let rows = exec::try_map_indexed(instances, |i| -> Result<(f64, f64)> {
        let s = stream.derive("instance", i as u64);
        let (spec, reward, base) = hash_instance(2 + i % 3, 2 + i % 3, &s)?;
        let (_, _, other) = hash_instance(2 + i % 3, 2 + i % 3, &s.derive("other", 0))?;
        let model = ExactModel::new(&spec, &reward)?;
        let pi = model.tabulate(&base)?;
        let pi_ref = model.tabulate(&other)?;
        let pd = model.performance_difference(&pi, &pi_ref);
        let direct = model.exact_return(&pi) - model.exact_return(&pi_ref);
        Ok(((pd - direct).abs(), model.surrogate_gap(&pi_ref, &pi_ref).abs()))
    })?;
    let worst = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let self_gap = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(vec![
        Check::assert(
            S,
            "advantage sum under d^pi equals J(pi) - J(pi_ref) (tol 1e-10)",
            worst <= 1e-10,
            format!("max residual {worst:.3e} over {instances} instances"),
        ),
        Check::assert(
            S,
            "surrogate gap of a policy against itself is zero",
            self_gap <= 1e-12,
            format!("max {self_gap:.3e}"),
        ),
    ])
}

fn visitation_suite(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "visitation";
    let instances = 20;
    let rows = exec::try_map_indexed(instances, |i| -> Result<f64> {
        let (spec, _, base) = hash_instance(2 + i % 3, 1 + i % 4, &stream.derive("instance", i as u64))?;
        let spec = spec.with_prompt_count(1 + i % 3)?;
        let d = visitation(&spec, &base)?;
        Ok((1..=spec.horizon).map(|h| (d.level_sum(h) - 1.0).abs()).fold(0.0, f64::max))
    })?;
    let worst = rows.iter().copied().fold(0.0, f64::max);
    Ok(vec![Check::assert(
        S,
        "state-action visitation sums to 1 at every step",
        worst <= 1e-12,
        format!("max deviation {worst:.3e} over {instances} instances"),
    )])
}

fn search_ledger(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "search-ledger";
    let nodes = fig3_node_counts(2, 4)?;
    let a = measured_prop1_ratios(2, 4, 1, 1, 2, 2, stream.derive("h4", 0).seed())?;
    let b = measured_prop1_ratios(3, 6, 2, 2, 2, 2, stream.derive("h6", 0).seed())?;
    let c = measured_prop1_ratios(2, 4, 4, 1, 2, 2, stream.derive("lh", 0).seed())?;
    let closed = prop1_ratios(4, 4, 1, 2, 2)?;
    Ok(vec![
        Check::assert(
            S,
            "exhaustive BoN touches 30 nodes, gold-guided search 8 (|A|=2, H=4)",
            nodes.bon == 30 && nodes.iro == 8,
            format!("bon {} iro {}", nodes.bon, nodes.iro),
        ),
        Check::assert(
            S,
            "H=4 L=1 I=1 K=B=2 ledgers give token ratio 64 and query ratio 16",
            a.token_ratio_matches && a.query_ratio_matches && a.token_ratio == 64.0 && a.query_ratio == 16.0,
            format!("token {} query {}", a.token_ratio, a.query_ratio),
        ),
        Check::assert(
            S,
            "H=6 L=2 I=2 K=B=2 ledgers give token ratio 16 and query ratio 8/3",
            b.token_ratio_matches && b.query_ratio_matches && b.token_ratio == 16.0,
            format!("token {} query {:.6}", b.token_ratio, b.query_ratio),
        ),
        Check::assert(
            S,
            "L = H collapses the token ratio to 1",
            closed.token_ratio == 1.0 && c.token_ratio_matches && c.token_ratio == 1.0,
            format!("closed form {} measured {}", closed.token_ratio, c.token_ratio),
        ),
    ])
}

fn budget_matching(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "budget-matching";
    let r = budget_matched_comparison(5, 6, 2, 2, 2, 1, 10_000, stream.derive("main", 0).seed())?;
    let expected_ratio = prop1_ratios(6, 2, 1, 2, 2)?.token_ratio_exact;
    let mut out = vec![
        Check::assert(
            S,
            "|A|=5 H=6 L=2 U=4 N=64: guided and BoN success agree within 3 sigma",
            r.z_iro_vs_bon.abs() <= 3.0,
            format!("iro {:.5} bon {:.5} z {:.3}", r.iro_rate, r.bon_rate, r.z_iro_vs_bon),
        ),
        Check::assert(
            S,
            "both rates agree with their closed forms within 3 sigma",
            r.z_iro_vs_closed.abs() <= 3.0 && r.z_bon_vs_closed.abs() <= 3.0,
            format!(
                "iro closed {:.5} z {:.3}, bon closed {:.5} z {:.3}",
                r.iro_closed_form, r.z_iro_vs_closed, r.bon_closed_form, r.z_bon_vs_closed
            ),
        ),
        Check::assert(
            S,
            "token ledgers differ by exactly (BK)^(H/L-1)",
            r.bon_ledger.tokens_generated as u128 == expected_ratio * r.iro_ledger.tokens_generated as u128,
            format!(
                "bon {} iro {} tokens, ratio {}",
                r.bon_ledger.tokens_generated,
                r.iro_ledger.tokens_generated,
                r.measured_token_ratio()
            ),
        ),
    ];
    // the closed forms only coincide when |A|^L is large; the rest is a curve
    for (i, &(a, h, l)) in [(2, 4, 1), (2, 4, 2), (2, 6, 1), (2, 6, 2), (5, 4, 1), (5, 4, 2), (5, 6, 1)]
        .iter()
        .enumerate()
    {
        let g = budget_matched_comparison(a, h, l, 2, 2, 1, 1000, stream.derive("grid", i as u64).seed())?;
        out.push(Check::info(
            S,
            format!("|A|={a} H={h} L={l} N={}", g.n),
            format!(
                "iro {:.4} (closed {:.4}) bon {:.4} (closed {:.4}) z {:.2}",
                g.iro_rate, g.iro_closed_form, g.bon_rate, g.bon_closed_form, g.z_iro_vs_bon
            ),
        ));
    }
    Ok(out)
}

fn success_probability(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "success-probability";
    let bon = budget_matched_comparison(2, 2, 1, 1, 2, 1, 10_000, stream.derive("bon", 0).seed())?;
    let iro = budget_matched_comparison(2, 4, 1, 1, 2, 1, 10_000, stream.derive("iro", 0).seed())?;
    let bon_curve: Vec<f64> = (1..=200).map(|n| bon_success_prob(2, 6, n, true)).collect();
    let iro_curve: Vec<f64> = (1..=50).map(|u| iro_success_prob(3, u, 6, 2)).collect::<Result<_>>()?;
    let increasing = |c: &[f64]| c.windows(2).all(|w| w[1] > w[0]) && c.iter().all(|&p| p > 0.0 && p <= 1.0);
    Ok(vec![
        Check::assert(
            S,
            "BoN |A|=2 H=2 N=4 matches 175/256 within 3 sigma",
            bon.z_bon_vs_closed.abs() <= 3.0 && (bon.bon_closed_form - 175.0 / 256.0).abs() < 1e-15,
            format!("measured {:.4} closed {:.5} z {:.3}", bon.bon_rate, bon.bon_closed_form, bon.z_bon_vs_closed),
        ),
        Check::assert(
            S,
            "guided |A|=2 H=4 L=1 U=2 matches 81/256 within 3 sigma",
            iro.z_iro_vs_closed.abs() <= 3.0 && (iro.iro_closed_form - 81.0 / 256.0).abs() < 1e-15,
            format!("measured {:.4} closed {:.5} z {:.3}", iro.iro_rate, iro.iro_closed_form, iro.z_iro_vs_closed),
        ),
        Check::assert(
            S,
            "success probabilities strictly increase with budget and stay in (0, 1]",
            increasing(&bon_curve) && increasing(&iro_curve),
            format!("bon N=200 {:.5}, iro U=50 {:.5}", bon_curve[199], iro_curve[49]),
        ),
        Check::assert(
            S,
            "first-order BoN form overestimates the exact one",
            bon_success_prob(2, 4, 4, false) == 0.25 && bon_success_prob(2, 4, 4, true) < 0.25,
            format!("approx 0.25 exact {:.5}", bon_success_prob(2, 4, 4, true)),
        ),
    ])
}

fn theorem_bound() -> Result<Vec<Check>> {
    const S: &str = "theorem-bound";
    let x = TheoremBoundInputs {
        r_max: 1.0,
        horizon: 5,
        iterations: 10,
        c_st: 16.0,
        m: 2000,
        function_class_size: 1000.0,
        delta: 0.1,
    };
    let mut ok_sign = true;
    let mut ok_mono = true;
    for form in [BoundForm::Appendix, BoundForm::MainText] {
        let b = |y: TheoremBoundInputs| theorem1_bound(&y, form);
        let base = b(x)?;
        ok_sign &= base.optimization >= 0.0 && base.estimation >= 0.0;
        ok_mono &= b(TheoremBoundInputs { m: 4000, ..x })?.total < base.total;
        ok_mono &= b(TheoremBoundInputs { c_st: 32.0, ..x })?.total > base.total;
        ok_mono &= b(TheoremBoundInputs { function_class_size: 2000.0, ..x })?.total > base.total;
    }
    let opt = |t: usize| -> Result<f64> {
        Ok(theorem1_bound(&TheoremBoundInputs { iterations: t, ..x }, BoundForm::Appendix)?.optimization)
    };
    let (o4, o8, o16) = (opt(4)?, opt(8)?, opt(16)?);
    let near_one = theorem1_bound(&TheoremBoundInputs { c_st: 1.0 + 1e-12, ..x }, BoundForm::Appendix)?.optimization;
    let big_m = theorem1_bound(&TheoremBoundInputs { m: usize::MAX, ..x }, BoundForm::Appendix)?.estimation;
    Ok(vec![
        Check::assert(S, "both addends are non-negative", ok_sign, "appendix and main-text forms".into()),
        Check::assert(
            S,
            "bound decreases in m and increases in C_ST and |F|",
            ok_mono,
            "appendix and main-text forms".into(),
        ),
        Check::assert(
            S,
            "optimization term shrinks as T doubles from 4 to 16",
            o8 < o4 && o16 < o8,
            format!("{o4:.4} {o8:.4} {o16:.4}"),
        ),
        Check::assert(
            S,
            "limits: C_ST -> 1 kills the first addend, m -> inf the second",
            near_one < 1e-4 && big_m < 1e-6,
            format!("{near_one:.2e} {big_m:.2e}"),
        ),
    ])
}

fn degeneration(stream: &RngStream) -> Result<Vec<Check>> {
    const S: &str = "degeneration";
    let spec = MdpSpec::new(2, 3)?;
    let reward = Reward::new(&RewardSpec::HashLeaf { seed: 77, scale: 1.0 }, &spec)?;
    let base = BasePolicy::SeededLogits { seed: 5, temperature: 1.0 };
    let model = ExactModel::new(&spec, &reward)?;
    let stack = gold_stack(&model, 1)?;
    let cfg = SearchConfig::new(2, 2, 3);
    let u = cfg.pool_size();
    let n = 10_000;
    let runs = exec::try_map_indexed(n, |i| -> Result<(f64, f64, u64, u64)> {
        let g = guided_generate(&spec, &reward, &base, &stack, &cfg, 0, &stream.derive("guided", i as u64))?;
        let b = bon_generate(&spec, &reward, &base, u, 0, &stream.derive("bon", i as u64))?;
        Ok((
            g.reward.unwrap_or(f64::NAN),
            b.reward.unwrap_or(f64::NAN),
            g.ledger.tokens_generated,
            b.ledger.tokens_generated,
        ))
    })?;
    let guided: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let bon: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let w = welch_t_test(&guided, &bon);
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let same_tokens = runs.iter().all(|r| r.2 == r.3);
    Ok(vec![
        Check::assert(
            S,
            "L = H guided search and BoN with N = U are indistinguishable (alpha 0.01)",
            w.p_value > 0.01,
            format!(
                "means {:.5} vs {:.5}, t {:.3}, p {:.3}",
                mean(&guided),
                mean(&bon),
                w.t,
                w.p_value
            ),
        ),
        Check::assert(S, "both spend U * H tokens per run", same_tokens, format!("U = {u}, H = 3")),
    ])
}

/// Per-seed outcome of the convergence-trend experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendSeed {
    pub seed: u64,
    pub base_gap: f64,
    pub best_gap_t10: f64,
    pub best_gap_t20: f64,
    pub final_gap_t20: f64,
    pub max_gap: f64,
    pub bound: f64,
}

impl TrendSeed {
    pub fn improves(&self) -> bool {
        self.best_gap_t20 <= self.best_gap_t10 && self.final_gap_t20 <= 0.2 * self.base_gap
    }
}

/// Sampled IRO with the square-root schedule on `|A| = 4, H = 5, m = 2000`,
/// run for `T = 10` and `T = 20` under the same seed.
pub fn theorem_trend_seed(seed: u64) -> Result<TrendSeed> {
    let spec = MdpSpec::new(4, 5)?;
    let reward = Reward::new(&RewardSpec::HashLeaf { seed: 1000 + seed, scale: 1.0 }, &spec)?;
    let base = BasePolicy::Uniform;
    let m = 2000;
    let cfg = |t: usize| {
        IroConfig::new(t, m, SearchConfig::new(2, 2, 1), BetaSchedule::TheoremSqrt { omega: None }).with_seed(seed)
    };
    let short = run_iro(&spec, &reward, &base, cfg(10))?;
    let long = run_iro(&spec, &reward, &base, cfg(20))?;
    let c_st = long.c_st.ok_or_else(|| Error::InvalidConfig("trend instance needs a finite C_ST".into()))?;
    let cells = spec.tree_node_count().unwrap_or(u128::MAX) as f64;
    let mut bound = f64::INFINITY;
    let mut max_gap: f64 = 0.0;
    for run in [&short, &long] {
        let b = theorem1_bound(
            &TheoremBoundInputs {
                r_max: reward.r_max(),
                horizon: spec.horizon,
                iterations: run.records.len(),
                c_st,
                m,
                function_class_size: cells,
                delta: 0.1,
            },
            BoundForm::Appendix,
        )?;
        bound = bound.min(b.total);
        for r in &run.records {
            max_gap = max_gap.max(r.exact_gap.unwrap_or(f64::INFINITY));
        }
    }
    let missing = || Error::InvalidConfig("trend runs need exact evaluation".into());
    Ok(TrendSeed {
        seed,
        base_gap: long.base_gap().ok_or_else(missing)?,
        best_gap_t10: short.best_gap().ok_or_else(missing)?,
        best_gap_t20: long.best_gap().ok_or_else(missing)?,
        final_gap_t20: long.final_gap().ok_or_else(missing)?,
        max_gap,
        bound,
    })
}

fn theorem_trend(seed: u64) -> Result<Vec<Check>> {
    const S: &str = "theorem-trend";
    let seeds = 20;
    let rows = exec::try_map_indexed(seeds, |i| theorem_trend_seed(seed.wrapping_mul(100).wrapping_add(i as u64)))?;
    let improving = rows.iter().filter(|r| r.improves()).count();
    let bounded = rows.iter().filter(|r| r.max_gap <= r.bound).count();
    let mean = |f: fn(&TrendSeed) -> f64| rows.iter().map(f).sum::<f64>() / seeds as f64;
    Ok(vec![
        Check::assert(
            S,
            "best gap at T=20 <= best gap at T=10 and final gap <= 20% of the initial gap on >= 16/20 seeds",
            improving >= 16,
            format!(
                "{improving}/{seeds} seeds; mean gaps: initial {:.4}, best T=10 {:.4}, best T=20 {:.4}, final {:.4}",
                mean(|r| r.base_gap),
                mean(|r| r.best_gap_t10),
                mean(|r| r.best_gap_t20),
                mean(|r| r.final_gap_t20)
            ),
        ),
        Check::assert(
            S,
            "measured gaps never exceed the convergence bound",
            bounded == seeds,
            format!("{bounded}/{seeds} seeds, smallest bound {:.3}", rows.iter().map(|r| r.bound).fold(f64::INFINITY, f64::min)),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(matches!(run_suite("unknown", 0), Err(Error::InvalidConfig(_))));
        assert!(is_known_suite("all") && !is_known_suite("nope"));
    }

    #[test]
    fn cheap_suites_pass() {
        for s in ["kl-closed-form", "gap-decomposition", "lemma-b5", "performance-difference", "visitation", "search-ledger", "theorem-bound"] {
            let checks = run_suite(s, 0).unwrap();
            assert!(all_passed(&checks), "{checks:#?}");
        }
    }

    #[test]
    fn margin_instance_has_unique_optimum() {
        let (spec, reward, _) = margin_instance(3, 3, &RngStream::new(4)).unwrap();
        let model = ExactModel::new(&spec, &reward).unwrap();
        assert_eq!(model.optimal_return(), 1.0);
        let tree = model.tree();
        let top = tree.leaves().filter(|&l| model.leaf_reward(l) > 0.9).count();
        assert_eq!(top, 1);
    }
}
