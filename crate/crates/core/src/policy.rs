//! Base policies, value-reweighted policies and the KL-regularized update.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{parse_token_string, token_string, MdpSpec, Prefix, Reward, TokenId};
use crate::oracle::{kl_divergence, ExactModel};
use crate::rng::{mix64, unit_f64};
use crate::value_fn::ValueFn;

/// Anything that yields a full next-token distribution at a prefix.
pub trait Policy: Sync {
    fn next_dist(&self, spec: &MdpSpec, s: &Prefix) -> Result<Vec<f64>>;
}

/// Numerically stable softmax of `logits` written into `out`.
/// `-inf` logits get probability zero.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        // infinite logits win outright, sharing mass equally
        let n = logits.iter().filter(|&&l| l == f64::INFINITY).count() as f64;
        for (o, &l) in out.iter_mut().zip(logits) {
            *o = if l == f64::INFINITY { 1.0 / n } else { 0.0 };
        }
        return;
    }
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

fn standard_normal(h: u64) -> f64 {
    // Box-Muller on two hash-derived uniforms; u1 in (0, 1]
    let u1 = 1.0 - unit_f64(h);
    let u2 = unit_f64(mix64(h ^ 0x5851_F42D_4C95_7F2D));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The frozen base model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasePolicy {
    Uniform,
    /// Softmax of hash-derived standard-normal logits divided by `temperature`.
    SeededLogits { seed: u64, temperature: f64 },
    ExplicitTable { table: ExplicitPolicy },
}

impl BasePolicy {
    pub fn validate(&self) -> Result<()> {
        if let BasePolicy::SeededLogits { temperature, .. } = self {
            if !(temperature.is_finite() && *temperature > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "base temperature must be positive, got {temperature}"
                )));
            }
        }
        Ok(())
    }

    fn seeded_logits(seed: u64, temperature: f64, vocab: usize, s: &Prefix) -> Vec<f64> {
        let mut h = mix64(seed ^ 0x2545_F491_4F6C_DD1D);
        h = mix64(h ^ s.prompt_id as u64);
        for t in &s.tokens {
            h = mix64(h ^ (t.0 as u64 + 1));
        }
        h = mix64(h ^ (s.tokens.len() as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25));
        (0..vocab)
            .map(|a| standard_normal(mix64(h ^ (a as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))) / temperature)
            .collect()
    }
}

impl Policy for BasePolicy {
    fn next_dist(&self, spec: &MdpSpec, s: &Prefix) -> Result<Vec<f64>> {
        base_dist(self, spec, s)
    }
}

/// Next-token distribution of the base policy at `s`.
pub fn base_dist(base: &BasePolicy, spec: &MdpSpec, s: &Prefix) -> Result<Vec<f64>> {
    if s.step() > spec.horizon {
        return Err(Error::StepOverflow {
            step: s.step(),
            horizon: spec.horizon,
        });
    }
    match base {
        BasePolicy::Uniform => Ok(vec![1.0 / spec.vocab_size as f64; spec.vocab_size]),
        BasePolicy::SeededLogits { seed, temperature } => {
            Ok(softmax(&BasePolicy::seeded_logits(*seed, *temperature, spec.vocab_size, s)))
        }
        BasePolicy::ExplicitTable { table } => table.next_dist(spec, s),
    }
}

/// A policy stored as one distribution per prefix (tiny instances only).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExplicitPolicy {
    rows: BTreeMap<Prefix, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PolicyRow {
    prompt_id: usize,
    prefix: String,
    probs: Vec<f64>,
}

impl Serialize for ExplicitPolicy {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<PolicyRow> = self
            .rows
            .iter()
            .map(|(p, probs)| PolicyRow {
                prompt_id: p.prompt_id,
                prefix: token_string(&p.tokens),
                probs: probs.clone(),
            })
            .collect();
        rows.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for ExplicitPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<PolicyRow>::deserialize(de)?;
        let mut out = ExplicitPolicy::new();
        for r in rows {
            let tokens = parse_token_string(&r.prefix).map_err(serde::de::Error::custom)?;
            out.insert(Prefix::new(r.prompt_id, tokens), r.probs);
        }
        Ok(out)
    }
}

impl ExplicitPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, s: Prefix, dist: Vec<f64>) {
        self.rows.insert(s, dist);
    }

    pub fn get(&self, s: &Prefix) -> Option<&[f64]> {
        self.rows.get(s).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Prefix, &Vec<f64>)> {
        self.rows.iter()
    }

    /// Writes `prompt_id,prefix,token,probability` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["prompt_id", "prefix", "token", "probability"])?;
        for (p, dist) in &self.rows {
            let ts = token_string(&p.tokens);
            for (a, prob) in dist.iter().enumerate() {
                w.write_record([p.prompt_id.to_string(), ts.clone(), a.to_string(), prob.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv). Tokens
    /// missing from a row get probability zero.
    pub fn read_csv(path: &Path, vocab_size: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut out = ExplicitPolicy::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 4 {
                return Err(Error::Parse(format!("policy rows need 4 columns, got {}", row.len())));
            }
            let prompt_id: usize = row[0].parse().map_err(|e| Error::Parse(format!("prompt_id: {e}")))?;
            let tokens = parse_token_string(&row[1])?;
            let a: usize = row[2].parse().map_err(|e| Error::Parse(format!("token: {e}")))?;
            let p: f64 = row[3].parse().map_err(|e| Error::Parse(format!("probability: {e}")))?;
            if a >= vocab_size {
                return Err(Error::InvalidToken {
                    token: a as u32,
                    vocab_size,
                });
            }
            let entry = out
                .rows
                .entry(Prefix::new(prompt_id, tokens))
                .or_insert_with(|| vec![0.0; vocab_size]);
            entry[a] = p;
        }
        Ok(out)
    }
}

impl Policy for ExplicitPolicy {
    fn next_dist(&self, spec: &MdpSpec, s: &Prefix) -> Result<Vec<f64>> {
        match self.rows.get(s) {
            Some(d) if d.len() == spec.vocab_size => Ok(d.clone()),
            Some(d) => Err(Error::InvalidPolicy(format!(
                "row at {s} has {} entries, expected {}",
                d.len(),
                spec.vocab_size
            ))),
            None => Err(Error::MissingPrefix(s.to_string())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GuidanceEntry {
    pub value: Arc<ValueFn>,
    pub beta: f64,
}

/// Ordered `(value function, beta)` pairs realizing
/// `pi_t ∝ pi_base * exp(sum_i V_i / beta_i)`. Empty means the base policy.
#[derive(Clone, Debug, Default)]
pub struct GuidanceStack {
    entries: Vec<GuidanceEntry>,
    /// Add the base log-probability of the newest chunk to search scores.
    pub include_base_logprob: bool,
    /// When a tabular value function has no entry, use the previous entry's
    /// prediction instead of its default.
    pub fallback_to_previous: bool,
}

/// Stack score plus how many lookups fell back to a default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StackScore {
    pub score: f64,
    pub default_hits: u64,
}

impl GuidanceStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: Arc<ValueFn>, beta: f64) -> Result<()> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
        }
        self.entries.push(GuidanceEntry { value, beta });
        Ok(())
    }

    pub fn with(mut self, value: ValueFn, beta: f64) -> Result<Self> {
        self.push(Arc::new(value), beta)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GuidanceEntry] {
        &self.entries
    }

    pub fn betas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.beta).collect()
    }

    /// `sum_i V_i(s) / beta_i`.
    pub fn score_detailed(&self, s: &Prefix) -> StackScore {
        let mut score = 0.0;
        let mut default_hits = 0;
        let mut prev: Option<f64> = None;
        for e in &self.entries {
            let look = e.value.lookup(s);
            let v = if look.default_hit {
                default_hits += 1;
                match (self.fallback_to_previous, prev) {
                    (true, Some(p)) => p,
                    _ => look.value,
                }
            } else {
                look.value
            };
            prev = Some(v);
            score += v / e.beta;
        }
        StackScore { score, default_hits }
    }

    pub fn score(&self, s: &Prefix) -> f64 {
        self.score_detailed(s).score
    }
}

/// `pi(a|s) ∝ pi_base(a|s) exp(sum_i V_i(s + a) / beta_i)`.
#[derive(Clone, Copy, Debug)]
pub struct ReweightedPolicy<'a> {
    pub base: &'a BasePolicy,
    pub stack: &'a GuidanceStack,
}

impl<'a> ReweightedPolicy<'a> {
    pub fn new(base: &'a BasePolicy, stack: &'a GuidanceStack) -> Self {
        Self { base, stack }
    }
}

impl Policy for ReweightedPolicy<'_> {
    fn next_dist(&self, spec: &MdpSpec, s: &Prefix) -> Result<Vec<f64>> {
        reweighted_dist(self.base, self.stack, spec, s)
    }
}

pub fn reweighted_dist(base: &BasePolicy, stack: &GuidanceStack, spec: &MdpSpec, s: &Prefix) -> Result<Vec<f64>> {
    let b = base_dist(base, spec, s)?;
    if stack.is_empty() {
        return Ok(b);
    }
    let mut child = s.clone();
    child.tokens.push(TokenId(0));
    let last = child.tokens.len() - 1;
    let logits: Vec<f64> = b
        .iter()
        .enumerate()
        .map(|(a, &p)| {
            if p > 0.0 {
                child.tokens[last] = TokenId(a as u32);
                p.ln() + stack.score(&child)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    Ok(softmax(&logits))
}

/// Exact KL-regularized improvement step using `Q^pi` from the oracle.
pub fn exact_npg_step(spec: &MdpSpec, reward: &Reward, pi: &ExplicitPolicy, beta: f64) -> Result<ExplicitPolicy> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    let model = ExactModel::new(spec, reward)?;
    let table = model.tabulate(pi)?;
    Ok(model.npg_step(&table, beta).to_explicit(model.tree()))
}

/// `E_{a~pi}[Q(a)] - beta * KL(pi || pi_ref)` at a single state.
pub fn kl_objective(pi: &[f64], pi_ref: &[f64], q: &[f64], beta: f64) -> f64 {
    let lin: f64 = pi.iter().zip(q).map(|(p, q)| p * q).sum();
    lin - beta * kl_divergence(pi, pi_ref)
}

/// The closed-form maximizer `pi_ref * exp(Q / beta)`, normalized.
pub fn closed_form_update(pi_ref: &[f64], q: &[f64], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = pi_ref
        .iter()
        .zip(q)
        .map(|(&p, &qa)| if p > 0.0 { p.ln() + qa / beta } else { f64::NEG_INFINITY })
        .collect();
    softmax(&logits)
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Numeric maximizer of [`kl_objective`] by projected gradient ascent with
/// backtracking, restricted to the support of `pi_ref`.
pub fn maximize_kl_objective_numeric(pi_ref: &[f64], q: &[f64], beta: f64, iters: usize) -> Vec<f64> {
    let n = pi_ref.len();
    let support: Vec<usize> = (0..n).filter(|&a| pi_ref[a] > 0.0).collect();
    let r: Vec<f64> = support.iter().map(|&a| pi_ref[a]).collect();
    let qs: Vec<f64> = support.iter().map(|&a| q[a]).collect();
    let f = |x: &[f64]| kl_objective(x, &r, &qs, beta);

    let mut x = vec![1.0 / support.len() as f64; support.len()];
    let mut fx = f(&x);
    let mut step = 1.0;
    for _ in 0..iters {
        let grad: Vec<f64> = x
            .iter()
            .zip(&r)
            .zip(&qs)
            .map(|((&xa, &ra), &qa)| qa - beta * ((xa.max(1e-300) / ra).ln() + 1.0))
            .collect();
        let mut improved = false;
        let mut s = step * 2.0;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&grad).map(|(xa, g)| xa + s * g).collect();
            let y = project_to_simplex(&cand);
            let fy = f(&y);
            if fy > fx {
                x = y;
                fx = fy;
                step = s;
                improved = true;
                break;
            }
            s *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let mut out = vec![0.0; n];
    for (i, &a) in support.iter().enumerate() {
        out[a] = x[i];
    }
    out
}

/// Objective values reached by the closed form and its competitors.
#[derive(Clone, Debug, PartialEq)]
pub struct KlOptimalityReport {
    pub closed_form_value: f64,
    pub best_trial_value: f64,
    pub numeric_value: f64,
    /// `closed_form_value - max(best_trial_value, numeric_value)`.
    pub margin: f64,
}

impl KlOptimalityReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.margin >= -tol
    }
}

fn random_simplex_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // Dirichlet(1, ..., 1) via normalized exponentials
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn kl_objective_optimality_report<R: Rng + ?Sized>(
    pi_ref: &[f64],
    q: &[f64],
    beta: f64,
    n_trials: usize,
    rng: &mut R,
) -> KlOptimalityReport {
    let n = pi_ref.len();
    let closed = closed_form_update(pi_ref, q, beta);
    let closed_value = kl_objective(&closed, pi_ref, q, beta);
    let mut best = f64::NEG_INFINITY;
    for i in 0..n_trials {
        let noise = random_simplex_point(n, rng);
        let cand = if i % 2 == 0 {
            noise
        } else {
            // local perturbation of the closed form at a random scale
            let eps = 10f64.powf(-6.0 * rng.gen::<f64>());
            closed.iter().zip(&noise).map(|(c, z)| (1.0 - eps) * c + eps * z).collect()
        };
        best = best.max(kl_objective(&cand, pi_ref, q, beta));
    }
    for a in 0..n {
        let mut vertex = vec![0.0; n];
        vertex[a] = 1.0;
        best = best.max(kl_objective(&vertex, pi_ref, q, beta));
    }
    let numeric = maximize_kl_objective_numeric(pi_ref, q, beta, 2000);
    let numeric_value = kl_objective(&numeric, pi_ref, q, beta);
    KlOptimalityReport {
        closed_form_value: closed_value,
        best_trial_value: best,
        numeric_value,
        margin: closed_value - best.max(numeric_value),
    }
}

/// True iff the closed-form reweighting scores at least as well (within
/// 1e-9) as `n_trials` random candidates and the numeric maximizer.
pub fn kl_objective_optimality_check<R: Rng + ?Sized>(
    pi_ref: &[f64],
    q: &[f64],
    beta: f64,
    n_trials: usize,
    rng: &mut R,
) -> bool {
    kl_objective_optimality_report(pi_ref, q, beta, n_trials, rng).passed(1e-9)
}

/// Inverse-CDF sampling in token-index order.
pub fn sample_token<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> TokenId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (a, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_positive = a;
            acc += p;
            if u < acc {
                return TokenId(a as u32);
            }
        }
    }
    TokenId(last_positive as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RewardSpec;
    use crate::rng::RngStream;
    use crate::value_fn::ValueFn;
    use std::collections::HashMap;

    fn tabular(entries: &[(Prefix, f64)]) -> ValueFn {
        let map: HashMap<Prefix, f64> = entries.iter().cloned().collect();
        ValueFn::from_means(map)
    }

    #[test]
    fn uniform_base() {
        let spec = MdpSpec::new(4, 3).unwrap();
        let d = base_dist(&BasePolicy::Uniform, &spec, &Prefix::root(0)).unwrap();
        assert_eq!(d, vec![0.25; 4]);
    }

    #[test]
    fn seeded_logits_pure_and_normalized() {
        let spec = MdpSpec::new(7, 4).unwrap();
        let base = BasePolicy::SeededLogits { seed: 3, temperature: 0.7 };
        let s = Prefix::new(0, vec![TokenId(2), TokenId(5)]);
        let a = base_dist(&base, &spec, &s).unwrap();
        let b = base_dist(&base, &spec, &s).unwrap();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let other = base_dist(&base, &spec, &Prefix::root(0)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn base_past_horizon_overflows() {
        let spec = MdpSpec::new(2, 1).unwrap();
        let s = Prefix::new(0, vec![TokenId(0)]);
        assert!(matches!(
            base_dist(&BasePolicy::Uniform, &spec, &s),
            Err(Error::StepOverflow { .. })
        ));
    }

    #[test]
    fn empty_stack_is_base() {
        let spec = MdpSpec::new(5, 3).unwrap();
        let base = BasePolicy::SeededLogits { seed: 11, temperature: 1.0 };
        let s = Prefix::new(0, vec![TokenId(1)]);
        assert_eq!(
            reweighted_dist(&base, &GuidanceStack::new(), &spec, &s).unwrap(),
            base_dist(&base, &spec, &s).unwrap()
        );
    }

    #[test]
    fn one_third_two_thirds() {
        let spec = MdpSpec::new(2, 2).unwrap();
        let root = Prefix::root(0);
        let v = tabular(&[(root.child(TokenId(0)), 0.0), (root.child(TokenId(1)), 2f64.ln())]);
        let stack = GuidanceStack::new().with(v, 1.0).unwrap();
        let d = reweighted_dist(&BasePolicy::Uniform, &stack, &spec, &root).unwrap();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stack_additivity_and_shift_invariance() {
        let spec = MdpSpec::new(3, 2).unwrap();
        let root = Prefix::root(0);
        let vals = [0.3, 1.7, -0.4];
        let full: Vec<_> = (0..3).map(|a| (root.child(TokenId(a)), vals[a as usize])).collect();
        let half: Vec<_> = (0..3).map(|a| (root.child(TokenId(a)), vals[a as usize] / 2.0)).collect();
        let shifted: Vec<_> = (0..3).map(|a| (root.child(TokenId(a)), vals[a as usize] + 5.0)).collect();
        let base = BasePolicy::SeededLogits { seed: 2, temperature: 1.0 };
        let one = GuidanceStack::new().with(tabular(&full), 1.0).unwrap();
        let two = GuidanceStack::new()
            .with(tabular(&half), 1.0)
            .unwrap()
            .with(tabular(&half), 1.0)
            .unwrap();
        let sh = GuidanceStack::new().with(tabular(&shifted), 1.0).unwrap();
        let d1 = reweighted_dist(&base, &one, &spec, &root).unwrap();
        let d2 = reweighted_dist(&base, &two, &spec, &root).unwrap();
        let d3 = reweighted_dist(&base, &sh, &spec, &root).unwrap();
        for a in 0..3 {
            assert!((d1[a] - d2[a]).abs() < 1e-14);
            assert!((d1[a] - d3[a]).abs() < 1e-14);
        }
    }

    #[test]
    fn stack_rejects_nonpositive_beta() {
        let mut s = GuidanceStack::new();
        assert!(s.push(Arc::new(ValueFn::zero()), 0.0).is_err());
        assert!(s.push(Arc::new(ValueFn::zero()), -1.0).is_err());
    }

    #[test]
    fn npg_limits() {
        let spec = MdpSpec::new(3, 2).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 4, scale: 1.0 }, &spec).unwrap();
        let model = ExactModel::new(&spec, &reward).unwrap();
        let base = BasePolicy::SeededLogits { seed: 8, temperature: 1.0 };
        let pi = model.tabulate(&base).unwrap().to_explicit(model.tree());

        let conservative = exact_npg_step(&spec, &reward, &pi, 1e9).unwrap();
        for (s, row) in pi.iter() {
            let new = conservative.get(s).unwrap();
            for a in 0..3 {
                assert!((row[a] - new[a]).abs() <= 1e-6);
            }
        }

        let greedy = exact_npg_step(&spec, &reward, &pi, 1e-6).unwrap();
        let t = model.tabulate(&pi).unwrap();
        let v = model.policy_values(&t);
        for node in 0..model.tree().interior_len() {
            let q: Vec<f64> = model.tree().children(node).map(|c| v[c]).collect();
            let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let argmax: Vec<_> = (0..3).filter(|&a| q[a] == best).collect();
            if argmax.len() == 1 {
                let row = greedy.get(&model.tree().prefix(node)).unwrap();
                assert!(row[argmax[0]] >= 0.999);
            }
        }
    }

    #[test]
    fn kl_closed_form_constant_q_is_reference() {
        let pi_ref = [0.2, 0.5, 0.3];
        let q = [0.4; 3];
        let c = closed_form_update(&pi_ref, &q, 0.7);
        for a in 0..3 {
            assert!((c[a] - pi_ref[a]).abs() < 1e-15);
        }
        let mut rng = RngStream::new(1).rng();
        assert!(kl_objective_optimality_check(&pi_ref, &q, 0.7, 200, &mut rng));
    }

    #[test]
    fn kl_closed_form_small_beta_is_one_hot() {
        let pi_ref = [0.25, 0.25, 0.25, 0.25];
        let q = [0.1, 0.9, 0.3, 0.5];
        let c = closed_form_update(&pi_ref, &q, 0.01);
        assert!(c[1] > 0.999);
        let mut rng = RngStream::new(2).rng();
        assert!(kl_objective_optimality_check(&pi_ref, &q, 0.01, 1000, &mut rng));
    }

    #[test]
    fn numeric_maximizer_approaches_closed_form() {
        let pi_ref = [0.1, 0.6, 0.3];
        let q = [1.0, 0.2, 0.5];
        let beta = 0.5;
        let c = closed_form_update(&pi_ref, &q, beta);
        let n = maximize_kl_objective_numeric(&pi_ref, &q, beta, 5000);
        for a in 0..3 {
            assert!((c[a] - n[a]).abs() < 1e-4, "{c:?} vs {n:?}");
        }
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.5, 0.5, 0.5]);
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = project_to_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn sampling_one_hot_and_determinism() {
        let stream = RngStream::new(5);
        let mut rng = stream.rng();
        for _ in 0..100 {
            assert_eq!(sample_token(&[0.0, 1.0, 0.0], &mut rng), TokenId(1));
        }
        let mut a = stream.derive("x", 0).rng();
        let mut b = stream.derive("x", 0).rng();
        for _ in 0..50 {
            assert_eq!(sample_token(&[0.3, 0.3, 0.4], &mut a), sample_token(&[0.3, 0.3, 0.4], &mut b));
        }
    }

    #[test]
    fn sampling_frequency() {
        let mut rng = RngStream::new(99).rng();
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_token(&[0.5, 0.5], &mut rng) == TokenId(1)).count();
        let f = ones as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.01, "{f}");
    }

    #[test]
    fn explicit_policy_csv_round_trip() {
        let mut p = ExplicitPolicy::new();
        p.insert(Prefix::root(0), vec![0.1, 0.9]);
        p.insert(Prefix::new(0, vec![TokenId(1)]), vec![1.0 / 3.0, 2.0 / 3.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        p.write_csv(&path).unwrap();
        let q = ExplicitPolicy::read_csv(&path, 2).unwrap();
        assert_eq!(p, q);
        let json = serde_json::to_string(&p).unwrap();
        let back: ExplicitPolicy = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
    }
}
