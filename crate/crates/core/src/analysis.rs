//! Closed-form cost and success-probability calculators, the convergence
//! bound, the gap decomposition, and their Monte Carlo cross-checks.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{MdpSpec, Prefix, Reward, RewardSpec, TokenId, Trajectory};
use crate::oracle::{ExactModel, NodePolicy};
use crate::policy::{BasePolicy, GuidanceStack};
use crate::rng::RngStream;
use crate::search::{
    bon_exhaustive, bon_generate, guided_generate, sample_chunk, CostLedger, FinalPick, SearchConfig,
};
use crate::value_fn::ValueFn;

/// Probability that `n` uniform rollouts contain the single optimal one.
/// `exact = false` gives the first-order form `n / |A|^H`.
pub fn bon_success_prob(vocab: usize, horizon: usize, n: u64, exact: bool) -> f64 {
    let p = (vocab as f64).powi(-(horizon as i32));
    if exact {
        -(n as f64 * (-p).ln_1p()).exp_m1()
    } else {
        n as f64 * p
    }
}

/// `(1 - (1 - |A|^-L)^U)^(H/L)` for the subset-sampling model.
pub fn iro_success_prob(vocab: usize, u: u64, horizon: usize, chunk: usize) -> Result<f64> {
    let hc = chunk_horizon(horizon, chunk)?;
    let q = (vocab as f64).powi(-(chunk as i32));
    let step = -(u as f64 * (-q).ln_1p()).exp_m1();
    Ok(if vocab == 1 { 1.0 } else { step.powi(hc as i32) })
}

fn chunk_horizon(horizon: usize, chunk: usize) -> Result<usize> {
    if chunk == 0 || horizon % chunk != 0 {
        return Err(Error::IndivisibleChunk { horizon, chunk });
    }
    Ok(horizon / chunk)
}

fn checked_pow(base: u128, exp: usize) -> Result<u128> {
    base.checked_pow(exp as u32).ok_or(Error::TooLarge {
        required: u128::MAX,
        cap: u128::MAX,
    })
}

/// Cost ratios at matched success probability, both as floats and as exact
/// rationals (`token_ratio` is always an integer).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Ratios {
    pub query_ratio: f64,
    pub token_ratio: f64,
    pub token_ratio_exact: u128,
    pub query_ratio_num: u128,
    pub query_ratio_den: u128,
}

/// `token = (BK)^(H/L - 1)`, `query = L / (H I) * (BK)^(H/L - 1)`.
pub fn prop1_ratios(horizon: usize, chunk: usize, value_fns: usize, successors: usize, beam: usize) -> Result<Prop1Ratios> {
    let hc = chunk_horizon(horizon, chunk)?;
    if value_fns == 0 || successors == 0 || beam == 0 {
        return Err(Error::InvalidConfig("I, B and K must be positive".into()));
    }
    let t = checked_pow((successors * beam) as u128, hc - 1)?;
    let num = chunk as u128 * t;
    let den = (horizon * value_fns) as u128;
    Ok(Prop1Ratios {
        query_ratio: num as f64 / den as f64,
        token_ratio: t as f64,
        token_ratio_exact: t,
        query_ratio_num: num,
        query_ratio_den: den,
    })
}

/// `N = U^(H/L)`, the BoN budget with the same success probability.
pub fn match_budget(u: u64, horizon: usize, chunk: usize) -> Result<u128> {
    let hc = chunk_horizon(horizon, chunk)?;
    checked_pow(u as u128, hc)
}

/// Inverse of [`match_budget`]: `U = N^(L/H)`.
pub fn budget_root(n: u128, horizon: usize, chunk: usize) -> Result<f64> {
    let hc = chunk_horizon(horizon, chunk)?;
    Ok((n as f64).powf(1.0 / hc as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonCost {
    pub n: u128,
    pub c_query: u128,
    pub c_token: u128,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IroCost {
    pub u: u64,
    pub k: u64,
    pub b: u64,
    pub l: u64,
    pub i: u64,
    pub c_query: u128,
    pub c_token: u128,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRatios {
    pub query_ratio: f64,
    pub token_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub bon: BonCost,
    pub iro: IroCost,
    pub ratios: CostRatios,
}

/// Analytic ledgers at the matched budget `N = U^(H/L)`.
pub fn cost_comparison(horizon: usize, chunk: usize, value_fns: usize, successors: usize, beam: usize) -> Result<CostComparison> {
    let hc = chunk_horizon(horizon, chunk)?;
    let u = (beam * successors) as u64;
    let n = match_budget(u, horizon, chunk)?;
    let bon = BonCost {
        n,
        c_query: n,
        c_token: n * horizon as u128,
    };
    let iro = IroCost {
        u,
        k: beam as u64,
        b: successors as u64,
        l: chunk as u64,
        i: value_fns as u64,
        c_query: u as u128 * value_fns as u128 * hc as u128,
        c_token: u as u128 * horizon as u128,
    };
    let ratios = CostRatios {
        query_ratio: bon.c_query as f64 / iro.c_query as f64,
        token_ratio: bon.c_token as f64 / iro.c_token as f64,
    };
    Ok(CostComparison { bon, iro, ratios })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundForm {
    /// Carries the 256 constant and `log(2T|F|/delta)`.
    Appendix,
    /// No 256 and `log(T|F|/delta)`.
    MainText,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremBoundInputs {
    pub r_max: f64,
    pub horizon: usize,
    pub iterations: usize,
    pub c_st: f64,
    pub m: usize,
    pub function_class_size: f64,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Bound {
    pub optimization: f64,
    pub estimation: f64,
    pub total: f64,
}

pub fn theorem1_bound(x: &TheoremBoundInputs, form: BoundForm) -> Result<Theorem1Bound> {
    if x.iterations < 2 {
        return Err(Error::InvalidConfig(format!("bound needs T >= 2, got {}", x.iterations)));
    }
    if !(x.c_st >= 1.0) {
        return Err(Error::InvalidConfig(format!("bound needs C_ST >= 1, got {}", x.c_st)));
    }
    if !(x.delta > 0.0 && x.delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", x.delta)));
    }
    if x.m == 0 || !(x.r_max > 0.0) || x.horizon == 0 || !(x.function_class_size >= 1.0) {
        return Err(Error::InvalidConfig("r_max, H, m and |F| must be positive".into()));
    }
    let t = x.iterations as f64;
    let h = x.horizon as f64;
    let r2 = x.r_max * x.r_max;
    let optimization = 2.0 * (r2 * h * h * t.ln() * x.c_st.ln() / t).sqrt();
    let (k, log_term) = match form {
        BoundForm::Appendix => (256.0, (2.0 * t * x.function_class_size / x.delta).ln()),
        BoundForm::MainText => (1.0, (t * x.function_class_size / x.delta).ln()),
    };
    let estimation = 2.0 * h * (x.c_st * k * r2 / x.m as f64 * log_term).sqrt();
    Ok(Theorem1Bound {
        optimization,
        estimation,
        total: optimization + estimation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapDecomposition {
    pub eps1: f64,
    pub eps2: f64,
    pub gap: f64,
}

/// Splits `J(pi*) - J(pi_hat)` into the error against the estimate
/// `Q_hat(s, a) = q_hat(child node)` and the estimation error itself.
pub fn gap_decomposition_nodes<F: Fn(usize) -> f64>(
    model: &ExactModel,
    pi_star: &NodePolicy,
    pi_hat: &NodePolicy,
    q_hat: F,
) -> GapDecomposition {
    let tree = model.tree();
    let d_star = model.reach(pi_star);
    let q_pi = model.policy_values(pi_hat);
    let (mut eps1, mut eps2) = (0.0, 0.0);
    for node in 0..tree.interior_len() {
        if tree.is_leaf(node) || d_star[node] == 0.0 {
            continue;
        }
        let (ps, ph) = (pi_star.row(node), pi_hat.row(node));
        let (mut a1, mut a2) = (0.0, 0.0);
        for (a, c) in tree.children(node).enumerate() {
            let diff = ps[a] - ph[a];
            let qh = q_hat(c);
            a1 += qh * diff;
            a2 += (q_pi[c] - qh) * diff;
        }
        eps1 += d_star[node] * a1;
        eps2 += d_star[node] * a2;
    }
    let gap = model.exact_return(pi_star) - model.exact_return(pi_hat);
    GapDecomposition { eps1, eps2, gap }
}

pub fn gap_decomposition(
    model: &ExactModel,
    pi_star: &NodePolicy,
    pi_hat: &NodePolicy,
    v_hat: &ValueFn,
) -> GapDecomposition {
    let tree = model.tree();
    gap_decomposition_nodes(model, pi_star, pi_hat, |c| v_hat.evaluate(&tree.prefix(c)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaB5 {
    pub kl_sum: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `sum_h E_{d*} KL(pi* || pi_base) <= H log C_ST`.
pub fn lemma_b5_check(model: &ExactModel, pi_base: &NodePolicy) -> Result<LemmaB5> {
    let pi_star = model.optimal_policy();
    let c = model.concentrability(&pi_star, pi_base)?;
    let kl_sum = model.kl_visitation_sum(&pi_star, pi_base, &pi_star);
    let bound = model.spec().horizon as f64 * c.ln();
    Ok(LemmaB5 {
        kl_sum,
        bound,
        holds: kl_sum <= bound + 1e-12,
    })
}

/// `I` copies of `(V*, beta = I)`, so the stack score is exactly `V*`.
pub fn gold_stack(model: &ExactModel, copies: usize) -> Result<GuidanceStack> {
    let v = model.optimal_values();
    let means = model.values_to_table(&v).iter().map(|(p, x)| (p.clone(), *x)).collect();
    let gold = std::sync::Arc::new(ValueFn::from_means(means));
    let mut stack = GuidanceStack::new();
    for _ in 0..copies.max(1) {
        stack.push(gold.clone(), copies.max(1) as f64)?;
    }
    Ok(stack)
}

/// One draw of the subset-sampling model: at every chunk step draw `U`
/// chunks from the base, keep the one the stack scores highest.
pub fn subset_guided_trial(
    spec: &MdpSpec,
    base: &BasePolicy,
    stack: &GuidanceStack,
    u: usize,
    chunk: usize,
    prompt_id: usize,
    stream: &RngStream,
) -> Result<(Trajectory, CostLedger)> {
    let mut ledger = CostLedger::default();
    let mut p = spec.root(prompt_id);
    let mut step = 0u64;
    while !spec.is_complete(&p.tokens) {
        let mut best: Option<(f64, Prefix)> = None;
        for j in 0..u {
            let (c, _) = sample_chunk(spec, base, &p, chunk, &stream.derive("draw", step * u as u64 + j as u64))?;
            ledger.tokens_generated += (c.tokens.len() - p.tokens.len()) as u64;
            let s = stack.score_detailed(&c);
            ledger.default_value_hits += s.default_hits;
            let better = match &best {
                None => true,
                Some((bs, bp)) => match s.score.partial_cmp(bs) {
                    Some(Ordering::Greater) => true,
                    Some(Ordering::Equal) => c < *bp,
                    _ => false,
                },
            };
            if better {
                best = Some((s.score, c));
            }
        }
        ledger.value_queries += (u * stack.len()) as u64;
        p = best.expect("u >= 1").1;
        step += 1;
    }
    Ok((Trajectory::from_prefix(spec, p)?, ledger))
}

/// Two-sided z statistic of an observed proportion against `p`.
pub fn binomial_z(successes: u64, trials: u64, p: f64) -> f64 {
    let n = trials as f64;
    let p_hat = successes as f64 / n;
    let sd = (p * (1.0 - p) / n).sqrt();
    if sd == 0.0 {
        return if p_hat == p { 0.0 } else { f64::INFINITY };
    }
    (p_hat - p) / sd
}

/// z statistic for the difference of two independent proportions.
pub fn two_proportion_z(s1: u64, n1: u64, s2: u64, n2: u64) -> f64 {
    let (p1, p2) = (s1 as f64 / n1 as f64, s2 as f64 / n2 as f64);
    let sd = (p1 * (1.0 - p1) / n1 as f64 + p2 * (1.0 - p2) / n2 as f64).sqrt();
    if sd == 0.0 {
        return if p1 == p2 { 0.0 } else { f64::INFINITY };
    }
    (p1 - p2) / sd
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's unequal-variance two-sample t test (two-sided).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> WelchTest {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        let p = if ma == mb { 1.0 } else { 0.0 };
        return WelchTest { t: 0.0, df: na + nb - 2.0, p_value: p };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p_value = match StudentsT::new(0.0, 1.0, df) {
        Ok(d) => 2.0 * (1.0 - d.cdf(t.abs())),
        Err(_) => 2.0 * (1.0 - Normal::standard().cdf(t.abs())),
    };
    WelchTest { t, df, p_value }
}

/// A Needle target that is not a constant string.
pub fn default_needle(vocab: usize, horizon: usize) -> Vec<TokenId> {
    (0..horizon).map(|h| TokenId(((h * 7 + 3) % vocab) as u32)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetMatched {
    pub vocab: usize,
    pub horizon: usize,
    pub chunk: usize,
    pub u: u64,
    pub n: u128,
    pub trials: u64,
    pub iro_successes: u64,
    pub bon_successes: u64,
    pub iro_rate: f64,
    pub bon_rate: f64,
    pub iro_closed_form: f64,
    pub bon_closed_form: f64,
    /// Difference of the two measured rates in standard errors.
    pub z_iro_vs_bon: f64,
    pub z_iro_vs_closed: f64,
    pub z_bon_vs_closed: f64,
    pub iro_ledger: CostLedger,
    pub bon_ledger: CostLedger,
}

impl BudgetMatched {
    pub fn within(&self, sigmas: f64) -> bool {
        self.z_iro_vs_bon.abs() <= sigmas && self.z_iro_vs_closed.abs() <= sigmas && self.z_bon_vs_closed.abs() <= sigmas
    }

    /// `C_token(BoN) / C_token(IRO)` from the summed ledgers.
    pub fn measured_token_ratio(&self) -> f64 {
        self.bon_ledger.tokens_generated as f64 / self.iro_ledger.tokens_generated as f64
    }
}

/// Gold-V*-guided subset sampling versus BoN at `N = U^(H/L)` on a uniform
/// Needle instance, `trials` independent runs each.
pub fn budget_matched_comparison(
    vocab: usize,
    horizon: usize,
    chunk: usize,
    beam: usize,
    successors: usize,
    value_fns: usize,
    trials: u64,
    seed: u64,
) -> Result<BudgetMatched> {
    let u = (beam * successors) as u64;
    let n = match_budget(u, horizon, chunk)?;
    let spec = MdpSpec::new(vocab, horizon)?;
    let target = default_needle(vocab, horizon);
    let reward = Reward::new(&RewardSpec::needle(target.clone()), &spec)?;
    let model = ExactModel::new(&spec, &reward)?;
    let stack = gold_stack(&model, value_fns)?;
    let base = BasePolicy::Uniform;
    let master = RngStream::new(seed);

    let iro = exec::try_map_indexed(trials as usize, |i| {
        subset_guided_trial(&spec, &base, &stack, u as usize, chunk, 0, &master.derive("subset", i as u64))
    })?;
    let bon = exec::try_map_indexed(trials as usize, |i| {
        bon_generate(&spec, &reward, &base, n as usize, 0, &master.derive("bon", i as u64))
    })?;
    let mut iro_ledger = CostLedger::default();
    let mut bon_ledger = CostLedger::default();
    let mut iro_successes = 0;
    let mut bon_successes = 0;
    for (t, l) in &iro {
        iro_ledger += *l;
        iro_successes += (t.tokens == target) as u64;
    }
    for o in &bon {
        bon_ledger += o.ledger;
        bon_successes += (o.trajectory.tokens == target) as u64;
    }
    let iro_closed_form = iro_success_prob(vocab, u, horizon, chunk)?;
    let bon_closed_form = bon_success_prob(vocab, horizon, n as u64, true);
    Ok(BudgetMatched {
        vocab,
        horizon,
        chunk,
        u,
        n,
        trials,
        iro_successes,
        bon_successes,
        iro_rate: iro_successes as f64 / trials as f64,
        bon_rate: bon_successes as f64 / trials as f64,
        iro_closed_form,
        bon_closed_form,
        z_iro_vs_bon: two_proportion_z(iro_successes, trials, bon_successes, trials),
        z_iro_vs_closed: binomial_z(iro_successes, trials, iro_closed_form),
        z_bon_vs_closed: binomial_z(bon_successes, trials, bon_closed_form),
        iro_ledger,
        bon_ledger,
    })
}

/// Ledgers of one guided search (gold stack, value-score pick, so every
/// chunk boundary is scored) and one BoN run at the matched budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRatios {
    pub bon: CostLedger,
    pub iro: CostLedger,
    pub token_ratio: f64,
    pub query_ratio: f64,
    pub expected: Prop1Ratios,
    /// Exact rational comparison against the closed forms.
    pub token_ratio_matches: bool,
    pub query_ratio_matches: bool,
}

pub fn measured_prop1_ratios(
    vocab: usize,
    horizon: usize,
    chunk: usize,
    value_fns: usize,
    successors: usize,
    beam: usize,
    seed: u64,
) -> Result<LedgerRatios> {
    let expected = prop1_ratios(horizon, chunk, value_fns, successors, beam)?;
    let u = (beam * successors) as u64;
    let n = match_budget(u, horizon, chunk)?;
    let spec = MdpSpec::new(vocab, horizon)?;
    let reward = Reward::new(&RewardSpec::needle(default_needle(vocab, horizon)), &spec)?;
    let model = ExactModel::new(&spec, &reward)?;
    let stack = gold_stack(&model, value_fns)?;
    let cfg = SearchConfig::new(beam, successors, chunk).with_final_pick(FinalPick::ByValueScore);
    let master = RngStream::new(seed);
    let iro = guided_generate(&spec, &reward, &BasePolicy::Uniform, &stack, &cfg, 0, &master.derive("iro", 0))?.ledger;
    let bon = bon_generate(&spec, &reward, &BasePolicy::Uniform, n as usize, 0, &master.derive("bon", 0))?.ledger;

    let iro_q = iro.value_queries + iro.reward_queries;
    let bon_q = bon.value_queries + bon.reward_queries;
    let token_ratio_matches = bon.tokens_generated as u128 == expected.token_ratio_exact * iro.tokens_generated as u128;
    let query_ratio_matches = bon_q as u128 * expected.query_ratio_den == expected.query_ratio_num * iro_q as u128;
    Ok(LedgerRatios {
        bon,
        iro,
        token_ratio: bon.tokens_generated as f64 / iro.tokens_generated as f64,
        query_ratio: bon_q as f64 / iro_q as f64,
        expected,
        token_ratio_matches,
        query_ratio_matches,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounts {
    pub bon: u64,
    pub iro: u64,
}

/// Distinct nodes touched by exhaustive BoN and by gold-guided search that
/// expands every token of a single parent (`K = 1, B = |A|, L = 1`).
pub fn fig3_node_counts(vocab: usize, horizon: usize) -> Result<NodeCounts> {
    let spec = MdpSpec::new(vocab, horizon)?;
    let target = vec![TokenId(vocab as u32 - 1); horizon];
    let reward = Reward::new(&RewardSpec::needle(target), &spec)?;
    let model = ExactModel::new(&spec, &reward)?;
    let stack = gold_stack(&model, 1)?;
    let cfg = SearchConfig::new(1, vocab, 1).exhaustive();
    let iro = guided_generate(&spec, &reward, &BasePolicy::Uniform, &stack, &cfg, 0, &RngStream::new(0))?;
    let bon = bon_exhaustive(&spec, &reward, 0, crate::mdp::DEFAULT_ENUMERATION_CAP)?;
    Ok(NodeCounts {
        bon: bon.ledger.nodes_expanded,
        iro: iro.ledger.nodes_expanded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iro::OracleContext;
    use crate::policy::BasePolicy;

    #[test]
    fn bon_probabilities() {
        assert_eq!(bon_success_prob(2, 1, 1, true), 0.5);
        assert!((bon_success_prob(2, 2, 4, true) - 175.0 / 256.0).abs() < 1e-15);
        assert_eq!(bon_success_prob(2, 4, 4, false), 0.25);
        let exact = bon_success_prob(2, 4, 4, true);
        assert!((exact - (1.0 - (15f64 / 16.0).powi(4))).abs() < 1e-15);
    }

    #[test]
    fn iro_probabilities() {
        assert_eq!(iro_success_prob(1, 3, 4, 1).unwrap(), 1.0);
        assert!((iro_success_prob(2, 2, 4, 1).unwrap() - 81.0 / 256.0).abs() < 1e-15);
        assert!(iro_success_prob(2, 1_000_000, 4, 1).unwrap() >= 1.0 - 1e-6);
        assert!(matches!(iro_success_prob(2, 2, 5, 2), Err(Error::IndivisibleChunk { .. })));
    }

    #[test]
    fn ratios() {
        let r = prop1_ratios(4, 4, 1, 2, 2).unwrap();
        assert_eq!(r.token_ratio, 1.0);
        let r = prop1_ratios(4, 1, 1, 2, 2).unwrap();
        assert_eq!((r.token_ratio, r.query_ratio), (64.0, 16.0));
        let r = prop1_ratios(6, 2, 2, 2, 2).unwrap();
        assert_eq!(r.token_ratio, 16.0);
        assert!((r.query_ratio - 8.0 / 3.0).abs() < 1e-15);
        assert!(matches!(prop1_ratios(5, 2, 1, 2, 2), Err(Error::IndivisibleChunk { .. })));
    }

    #[test]
    fn budget() {
        assert_eq!(match_budget(4, 6, 2).unwrap(), 64);
        assert_eq!(match_budget(1, 9, 3).unwrap(), 1);
        assert!((budget_root(64, 6, 2).unwrap() - 4.0).abs() < 1e-12);
        let c = cost_comparison(4, 1, 1, 2, 2).unwrap();
        assert_eq!(c.ratios.token_ratio, 64.0);
        assert_eq!(c.ratios.query_ratio, 16.0);
        assert_eq!(c.ratios.token_ratio, c.bon.c_token as f64 / c.iro.c_token as f64);
    }

    #[test]
    fn ledger_ratios_match() {
        let r = measured_prop1_ratios(2, 4, 1, 1, 2, 2, 0).unwrap();
        assert!(r.token_ratio_matches && r.query_ratio_matches, "{r:?}");
        assert_eq!((r.token_ratio, r.query_ratio), (64.0, 16.0));
        let r = measured_prop1_ratios(2, 6, 2, 2, 2, 2, 0).unwrap();
        assert!(r.token_ratio_matches && r.query_ratio_matches, "{r:?}");
        assert_eq!(r.token_ratio, 16.0);
    }

    #[test]
    fn bound_shapes() {
        let x = TheoremBoundInputs {
            r_max: 1.0,
            horizon: 5,
            iterations: 4,
            c_st: 1.0 + 1e-12,
            m: 1000,
            function_class_size: 100.0,
            delta: 0.1,
        };
        let b = theorem1_bound(&x, BoundForm::Appendix).unwrap();
        assert!(b.optimization < 1e-5);
        let big_m = theorem1_bound(&TheoremBoundInputs { m: usize::MAX, ..x }, BoundForm::Appendix).unwrap();
        assert!(big_m.estimation < 1e-6);
        let opt = |t| {
            theorem1_bound(&TheoremBoundInputs { iterations: t, c_st: 8.0, ..x }, BoundForm::MainText)
                .unwrap()
                .optimization
        };
        assert!(opt(8) < opt(4) && opt(16) < opt(8));
        let a = theorem1_bound(&TheoremBoundInputs { c_st: 8.0, ..x }, BoundForm::Appendix).unwrap();
        let m = theorem1_bound(&TheoremBoundInputs { c_st: 8.0, ..x }, BoundForm::MainText).unwrap();
        assert_eq!(a.optimization, m.optimization);
        assert!(a.estimation > m.estimation);
        assert!(theorem1_bound(&TheoremBoundInputs { iterations: 1, ..x }, BoundForm::Appendix).is_err());
    }

    #[test]
    fn decomposition_identities() {
        let spec = MdpSpec::new(3, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 8, scale: 1.0 }, &spec).unwrap();
        let model = ExactModel::new(&spec, &reward).unwrap();
        let pi_star = model.optimal_policy();
        let pi_hat = model.tabulate(&BasePolicy::SeededLogits { seed: 2, temperature: 1.0 }).unwrap();
        let exact = crate::value_fn::expected_fit_in(&model, &pi_hat);
        let d = gap_decomposition(&model, &pi_star, &pi_hat, &exact);
        assert!(d.eps2.abs() < 1e-12);
        assert!((d.eps1 - d.gap).abs() < 1e-10);
        let noisy = gap_decomposition_nodes(&model, &pi_star, &pi_hat, |c| ((c * 37) % 11) as f64 / 11.0);
        assert!((noisy.eps1 + noisy.eps2 - noisy.gap).abs() < 1e-10);
        let same = gap_decomposition(&model, &pi_star, &pi_star, &exact);
        assert_eq!((same.eps1, same.eps2, same.gap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn lemma_b5_uniform() {
        let spec = MdpSpec::new(3, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 8, scale: 1.0 }, &spec).unwrap();
        let o = OracleContext::new(&spec, &reward, &BasePolicy::Uniform).unwrap();
        let l = lemma_b5_check(&o.model, &o.base_table).unwrap();
        assert!(l.holds);
        assert!((l.kl_sum - 27f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fig3() {
        assert_eq!(fig3_node_counts(2, 4).unwrap(), NodeCounts { bon: 30, iro: 8 });
    }

    #[test]
    fn subset_ledger() {
        let spec = MdpSpec::new(5, 6).unwrap();
        let reward = Reward::new(&RewardSpec::needle(default_needle(5, 6)), &spec).unwrap();
        let model = ExactModel::new(&spec, &reward).unwrap();
        let stack = gold_stack(&model, 2).unwrap();
        let (_, l) = subset_guided_trial(&spec, &BasePolicy::Uniform, &stack, 4, 2, 0, &RngStream::new(1)).unwrap();
        assert_eq!(l.tokens_generated, 24);
        assert_eq!(l.value_queries, 4 * 2 * 3);
    }

    #[test]
    fn welch_basics() {
        let a: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let w = welch_t_test(&a, &a);
        assert!(w.p_value > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        assert!(welch_t_test(&a, &b).p_value < 1e-10);
    }
}
