//! Exact dynamic programming on small instances.
//!
//! Everything here enumerates the full generation tree and is the ground
//! truth the approximate components are checked against. Instances above the
//! enumeration cap are refused, never approximated.
//!
//! With deterministic append transitions the state-action pair `(s, a)` is
//! identified with the child node `s + a`, so `Q(s, a) = V(s + a)` and the
//! state-action visitation `d_h(s, a)` is the reach probability of the child.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{token_string, MdpSpec, Prefix, Reward, TokenId, DEFAULT_ENUMERATION_CAP};
use crate::policy::{ExplicitPolicy, Policy};
use crate::tree::GenerationTree;

/// Probability rows must sum to one within this tolerance.
pub const POLICY_SUM_TOL: f64 = 1e-9;

/// A policy tabulated on the rows of a [`GenerationTree`].
#[derive(Clone, Debug, PartialEq)]
pub struct NodePolicy {
    vocab: usize,
    probs: Vec<f64>,
}

impl NodePolicy {
    /// Rows for every interior node, filled by `f(node)`. Leaves get zeros.
    pub fn from_fn<F>(tree: &GenerationTree, f: F) -> Result<Self>
    where
        F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
    {
        let vocab = tree.vocab();
        let rows = exec::try_map_indexed(tree.interior_len(), |node| {
            if tree.is_leaf(node) {
                Ok(vec![0.0; vocab])
            } else {
                f(node)
            }
        })?;
        let mut probs = Vec::with_capacity(tree.interior_len() * vocab);
        for (node, row) in rows.into_iter().enumerate() {
            if row.len() != vocab {
                return Err(Error::InvalidPolicy(format!(
                    "row at {} has {} entries, expected {vocab}",
                    tree.prefix(node),
                    row.len()
                )));
            }
            probs.extend(row);
        }
        let out = Self { vocab, probs };
        out.validate(tree)?;
        Ok(out)
    }

    /// Tabulates any [`Policy`] on the tree.
    pub fn tabulate(tree: &GenerationTree, spec: &MdpSpec, policy: &dyn Policy) -> Result<Self> {
        Self::from_fn(tree, |node| policy.next_dist(spec, &tree.prefix(node)))
    }

    pub fn uniform(tree: &GenerationTree) -> Self {
        let v = tree.vocab();
        let mut probs = vec![1.0 / v as f64; tree.interior_len() * v];
        for node in 0..tree.interior_len() {
            if tree.is_leaf(node) {
                probs[node * v..(node + 1) * v].fill(0.0);
            }
        }
        Self { vocab: v, probs }
    }

    pub fn validate(&self, tree: &GenerationTree) -> Result<()> {
        for node in 0..tree.interior_len() {
            if tree.is_leaf(node) {
                continue;
            }
            let row = self.row(node);
            let mut sum = 0.0;
            for &p in row {
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::InvalidPolicy(format!(
                        "negative or non-finite probability at {}",
                        tree.prefix(node)
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > POLICY_SUM_TOL {
                return Err(Error::InvalidPolicy(format!(
                    "distribution at {} sums to {sum}",
                    tree.prefix(node)
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, node: usize) -> &[f64] {
        &self.probs[node * self.vocab..(node + 1) * self.vocab]
    }

    #[inline]
    pub fn prob(&self, node: usize, a: usize) -> f64 {
        self.probs[node * self.vocab + a]
    }

    pub fn to_explicit(&self, tree: &GenerationTree) -> ExplicitPolicy {
        let mut out = ExplicitPolicy::new();
        for node in 0..tree.interior_len() {
            if !tree.is_leaf(node) {
                out.insert(tree.prefix(node), self.row(node).to_vec());
            }
        }
        out
    }

    /// `max |p - q|` over all entries.
    pub fn max_abs_diff(&self, other: &NodePolicy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `KL(p || q)` with `0 ln 0 = 0`; infinite when `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&pa, &qa) in p.iter().zip(q) {
        if pa > 0.0 {
            if qa <= 0.0 {
                return f64::INFINITY;
            }
            kl += pa * (pa / qa).ln();
        }
    }
    kl
}

/// A tree with its leaf rewards; the workhorse behind the exact oracles.
#[derive(Clone, Debug)]
pub struct ExactModel {
    spec: MdpSpec,
    tree: GenerationTree,
    leaf_reward: Vec<f64>,
}

impl ExactModel {
    pub fn new(spec: &MdpSpec, reward: &Reward) -> Result<Self> {
        Self::with_cap(spec, reward, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(spec: &MdpSpec, reward: &Reward, cap: u128) -> Result<Self> {
        let tree = GenerationTree::build(spec, cap)?;
        let leaf_reward = exec::map_indexed(tree.len(), |n| {
            if tree.is_leaf(n) {
                let p = tree.prefix(n);
                reward.score_tokens(p.prompt_id, &p.tokens)
            } else {
                0.0
            }
        });
        Ok(Self {
            spec: spec.clone(),
            tree,
            leaf_reward,
        })
    }

    /// Tree without rewards, for reward-free quantities (visitation, KL).
    pub fn structure_only(spec: &MdpSpec) -> Result<Self> {
        let tree = GenerationTree::build(spec, DEFAULT_ENUMERATION_CAP)?;
        let leaf_reward = vec![0.0; tree.len()];
        Ok(Self {
            spec: spec.clone(),
            tree,
            leaf_reward,
        })
    }

    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    pub fn tree(&self) -> &GenerationTree {
        &self.tree
    }

    pub fn leaf_reward(&self, node: usize) -> f64 {
        self.leaf_reward[node]
    }

    pub fn tabulate(&self, policy: &dyn Policy) -> Result<NodePolicy> {
        NodePolicy::tabulate(&self.tree, &self.spec, policy)
    }

    /// `V*` per node: leaf reward at leaves, max over children elsewhere.
    pub fn optimal_values(&self) -> Vec<f64> {
        let t = &self.tree;
        let mut v = self.leaf_reward.clone();
        for node in (0..t.interior_len()).rev() {
            if t.is_leaf(node) {
                continue;
            }
            v[node] = t.children(node).map(|c| v[c]).fold(f64::NEG_INFINITY, f64::max);
        }
        v
    }

    /// Greedy policy on node values; ties go to the lowest token id.
    pub fn greedy_policy(&self, values: &[f64]) -> NodePolicy {
        let t = &self.tree;
        let vocab = t.vocab();
        let mut probs = vec![0.0; t.interior_len() * vocab];
        for node in 0..t.interior_len() {
            if t.is_leaf(node) {
                continue;
            }
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (a, c) in t.children(node).enumerate() {
                if values[c] > best_v {
                    best_v = values[c];
                    best = a;
                }
            }
            probs[node * vocab + best] = 1.0;
        }
        NodePolicy { vocab, probs }
    }

    /// The greedy-on-`V*` optimal policy.
    pub fn optimal_policy(&self) -> NodePolicy {
        self.greedy_policy(&self.optimal_values())
    }

    /// `J(pi*)`: mean over prompts of `V*(root)`.
    pub fn optimal_return(&self) -> f64 {
        let v = self.optimal_values();
        self.mean_over_roots(&v)
    }

    fn mean_over_roots(&self, v: &[f64]) -> f64 {
        let roots = self.tree.roots();
        let n = roots.len() as f64;
        roots.map(|r| v[r]).sum::<f64>() / n
    }

    /// `V^pi` per node; `Q^pi(s, a)` is the entry of the child.
    pub fn policy_values(&self, pi: &NodePolicy) -> Vec<f64> {
        let t = &self.tree;
        let mut v = self.leaf_reward.clone();
        for node in (0..t.interior_len()).rev() {
            if t.is_leaf(node) {
                continue;
            }
            let row = pi.row(node);
            v[node] = t.children(node).zip(row).map(|(c, &p)| p * v[c]).sum();
        }
        v
    }

    /// Probability of reaching each node under `pi` from the uniform prompt
    /// distribution. For a non-root node this is `d_h(parent, token)`.
    pub fn reach(&self, pi: &NodePolicy) -> Vec<f64> {
        let t = &self.tree;
        let mut d = vec![0.0; t.len()];
        let mu = 1.0 / t.num_prompts() as f64;
        for r in t.roots() {
            d[r] = mu;
        }
        for node in 0..t.interior_len() {
            if t.is_leaf(node) || d[node] == 0.0 {
                continue;
            }
            let row = pi.row(node);
            for (c, &p) in t.children(node).zip(row) {
                d[c] = d[node] * p;
            }
        }
        d
    }

    pub fn exact_return(&self, pi: &NodePolicy) -> f64 {
        let v = self.policy_values(pi);
        self.mean_over_roots(&v)
    }

    fn expected_advantage(&self, weights: &[f64], pi: &NodePolicy, ref_values: &[f64]) -> f64 {
        let t = &self.tree;
        let mut total = 0.0;
        for node in 0..t.interior_len() {
            if t.is_leaf(node) || weights[node] == 0.0 {
                continue;
            }
            let row = pi.row(node);
            let adv: f64 = t
                .children(node)
                .zip(row)
                .map(|(c, &p)| p * (ref_values[c] - ref_values[node]))
                .sum();
            total += weights[node] * adv;
        }
        total
    }

    /// `sum_h E_{s ~ d_h^pi, a ~ pi} [A^{pi_ref}(s, a)]`.
    pub fn performance_difference(&self, pi: &NodePolicy, pi_ref: &NodePolicy) -> f64 {
        let v_ref = self.policy_values(pi_ref);
        let d = self.reach(pi);
        self.expected_advantage(&d, pi, &v_ref)
    }

    /// Same advantage sum with states drawn from the reference visitation.
    pub fn surrogate_gap(&self, pi: &NodePolicy, pi_ref: &NodePolicy) -> f64 {
        let v_ref = self.policy_values(pi_ref);
        let d = self.reach(pi_ref);
        self.expected_advantage(&d, pi, &v_ref)
    }

    /// `max d^{pi*}_h(s,a) / d^{base}_h(s,a)` over pairs the optimal policy visits.
    pub fn concentrability(&self, pi_star: &NodePolicy, pi_base: &NodePolicy) -> Result<f64> {
        let d_star = self.reach(pi_star);
        let d_base = self.reach(pi_base);
        let mut c: f64 = 0.0;
        for node in self.tree.roots().end..self.tree.len() {
            if d_star[node] > 0.0 {
                if d_base[node] <= 0.0 {
                    return Err(Error::NoCoverage(self.tree.prefix(node).to_string()));
                }
                c = c.max(d_star[node] / d_base[node]);
            }
        }
        Ok(c)
    }

    /// `sum_h E_{s ~ d_h^w} KL(p(.|s) || q(.|s))`.
    pub fn kl_visitation_sum(&self, p: &NodePolicy, q: &NodePolicy, weight: &NodePolicy) -> f64 {
        let t = &self.tree;
        let d = self.reach(weight);
        let mut total = 0.0;
        for node in 0..t.interior_len() {
            if t.is_leaf(node) || d[node] == 0.0 {
                continue;
            }
            total += d[node] * kl_divergence(p.row(node), q.row(node));
        }
        total
    }

    /// One exact KL-regularized update:
    /// `pi_new(a|s) ∝ pi(a|s) exp(Q^pi(s, a) / beta)` at every interior node.
    pub fn npg_step(&self, pi: &NodePolicy, beta: f64) -> NodePolicy {
        let q = self.policy_values(pi);
        self.reweight_with(pi, beta, |c| q[c])
    }

    /// `pi_new(a|s) ∝ pi(a|s) exp(f(s + a) / beta)` with max-subtraction.
    pub fn reweight_with<F: Fn(usize) -> f64>(&self, pi: &NodePolicy, beta: f64, f: F) -> NodePolicy {
        let t = &self.tree;
        let vocab = t.vocab();
        let mut probs = vec![0.0; t.interior_len() * vocab];
        let mut logits = vec![0.0; vocab];
        for node in 0..t.interior_len() {
            if t.is_leaf(node) {
                continue;
            }
            let row = pi.row(node);
            for (a, c) in t.children(node).enumerate() {
                logits[a] = if row[a] > 0.0 {
                    row[a].ln() + f(c) / beta
                } else {
                    f64::NEG_INFINITY
                };
            }
            crate::policy::softmax_into(&logits, &mut probs[node * vocab..(node + 1) * vocab]);
        }
        NodePolicy { vocab, probs }
    }

    pub fn values_to_table(&self, v: &[f64]) -> ValueTable {
        let mut values = HashMap::with_capacity(v.len());
        for (n, &x) in v.iter().enumerate() {
            values.insert(self.tree.prefix(n), x);
        }
        ValueTable { values }
    }
}

/// Exact values keyed by prefix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueTable {
    values: HashMap<Prefix, f64>,
}

impl ValueTable {
    pub fn get(&self, s: &Prefix) -> Option<f64> {
        self.values.get(s).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Prefix, &f64)> {
        self.values.iter()
    }

    /// Writes `prompt_id,prefix,value` rows in prefix order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<_> = self.values.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["prompt_id", "prefix", "value"])?;
        for (p, v) in rows {
            w.write_record([p.prompt_id.to_string(), token_string(&p.tokens), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Q^pi(s, a)` keyed by `(prefix, token)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QTable {
    values: HashMap<(Prefix, TokenId), f64>,
}

impl QTable {
    pub fn get(&self, s: &Prefix, a: TokenId) -> Option<f64> {
        self.values.get(&(s.clone(), a)).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(Prefix, TokenId), &f64)> {
        self.values.iter()
    }
}

/// `d_h^pi(s, a)` for `h = 1..H` (index `h - 1`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisitationMeasure {
    pub levels: Vec<HashMap<(Prefix, TokenId), f64>>,
}

impl VisitationMeasure {
    pub fn level_sum(&self, h: usize) -> f64 {
        let mut entries: Vec<_> = self.levels[h - 1].iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        entries.into_iter().map(|(_, &p)| p).sum()
    }

    pub fn get(&self, h: usize, s: &Prefix, a: TokenId) -> f64 {
        self.levels[h - 1].get(&(s.clone(), a)).copied().unwrap_or(0.0)
    }
}

pub fn optimal_values(spec: &MdpSpec, reward: &Reward) -> Result<ValueTable> {
    let m = ExactModel::new(spec, reward)?;
    Ok(m.values_to_table(&m.optimal_values()))
}

/// Greedy optimal policy as an explicit table (lowest-token tie-break).
pub fn optimal_policy(spec: &MdpSpec, reward: &Reward) -> Result<ExplicitPolicy> {
    let m = ExactModel::new(spec, reward)?;
    Ok(m.optimal_policy().to_explicit(m.tree()))
}

pub fn policy_values(spec: &MdpSpec, reward: &Reward, pi: &dyn Policy) -> Result<(ValueTable, QTable)> {
    let m = ExactModel::new(spec, reward)?;
    let table = m.tabulate(pi)?;
    let v = m.policy_values(&table);
    let t = m.tree();
    let mut q = HashMap::new();
    for node in 0..t.interior_len() {
        if t.is_leaf(node) {
            continue;
        }
        let s = t.prefix(node);
        for (a, c) in t.children(node).enumerate() {
            q.insert((s.clone(), TokenId(a as u32)), v[c]);
        }
    }
    Ok((m.values_to_table(&v), QTable { values: q }))
}

pub fn visitation(spec: &MdpSpec, pi: &dyn Policy) -> Result<VisitationMeasure> {
    let m = ExactModel::structure_only(spec)?;
    let table = m.tabulate(pi)?;
    let d = m.reach(&table);
    let t = m.tree();
    let mut levels = vec![HashMap::new(); spec.horizon];
    for node in 0..t.interior_len() {
        if t.is_leaf(node) {
            continue;
        }
        let s = t.prefix(node);
        let h = t.depth(node) + 1;
        for (a, c) in t.children(node).enumerate() {
            levels[h - 1].insert((s.clone(), TokenId(a as u32)), d[c]);
        }
    }
    Ok(VisitationMeasure { levels })
}

pub fn exact_return(spec: &MdpSpec, reward: &Reward, pi: &dyn Policy) -> Result<f64> {
    let m = ExactModel::new(spec, reward)?;
    Ok(m.exact_return(&m.tabulate(pi)?))
}

pub fn performance_difference(spec: &MdpSpec, reward: &Reward, pi: &dyn Policy, pi_ref: &dyn Policy) -> Result<f64> {
    let m = ExactModel::new(spec, reward)?;
    Ok(m.performance_difference(&m.tabulate(pi)?, &m.tabulate(pi_ref)?))
}

pub fn surrogate_gap(spec: &MdpSpec, reward: &Reward, pi: &dyn Policy, pi_ref: &dyn Policy) -> Result<f64> {
    let m = ExactModel::new(spec, reward)?;
    Ok(m.surrogate_gap(&m.tabulate(pi)?, &m.tabulate(pi_ref)?))
}

pub fn concentrability(spec: &MdpSpec, pi_star: &dyn Policy, pi_base: &dyn Policy) -> Result<f64> {
    let m = ExactModel::structure_only(spec)?;
    m.concentrability(&m.tabulate(pi_star)?, &m.tabulate(pi_base)?)
}

pub fn kl_visitation_sum(spec: &MdpSpec, p: &dyn Policy, q: &dyn Policy, weight: &dyn Policy) -> Result<f64> {
    let m = ExactModel::structure_only(spec)?;
    Ok(m.kl_visitation_sum(&m.tabulate(p)?, &m.tabulate(q)?, &m.tabulate(weight)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{enumerate_trajectories, RewardSpec, Trajectory};
    use crate::policy::BasePolicy;

    fn toks(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&t| TokenId(t)).collect()
    }

    fn table_reward(spec: &MdpSpec, rows: &[(&str, f64)]) -> Reward {
        let entries = rows.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Reward::new(
            &RewardSpec::ExplicitTable {
                entries,
                default_value: 0.0,
            },
            spec,
        )
        .unwrap()
    }

    #[test]
    fn needle_optimal_value_is_one() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let r = Reward::new(&RewardSpec::needle(toks(&[1, 1, 0])), &spec).unwrap();
        let v = optimal_values(&spec, &r).unwrap();
        assert_eq!(v.get(&Prefix::root(0)), Some(1.0));
    }

    #[test]
    fn hash_leaf_root_value_is_max_leaf() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let r = Reward::new(&RewardSpec::HashLeaf { seed: 5, scale: 1.0 }, &spec).unwrap();
        let brute = enumerate_trajectories(&spec, 0, 100)
            .unwrap()
            .map(|t| r.evaluate(&spec, &t).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let v = optimal_values(&spec, &r).unwrap();
        assert_eq!(v.get(&Prefix::root(0)), Some(brute));
        // leaves carry their reward
        for t in enumerate_trajectories(&spec, 0, 100).unwrap() {
            assert_eq!(v.get(&t.as_prefix()), Some(r.evaluate(&spec, &t).unwrap()));
        }
    }

    #[test]
    fn uniform_value_is_leaf_average() {
        let spec = MdpSpec::new(2, 2).unwrap();
        let r = table_reward(&spec, &[("0 0", 1.0), ("1 1", 1.0)]);
        let (v, q) = policy_values(&spec, &r, &BasePolicy::Uniform).unwrap();
        assert!((v.get(&Prefix::root(0)).unwrap() - 0.5).abs() < 1e-15);
        // Q(s, a) = V(s + a)
        for ((s, a), qv) in q.iter() {
            assert_eq!(v.get(&s.child(*a)).unwrap(), *qv);
        }
    }

    #[test]
    fn deterministic_policy_returns_path_reward() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let target = toks(&[0, 1, 1]);
        let r = Reward::new(&RewardSpec::needle(target.clone()), &spec).unwrap();
        let pi = optimal_policy(&spec, &r).unwrap();
        assert_eq!(exact_return(&spec, &r, &pi).unwrap(), 1.0);
        // uniform hits the needle 1/8 of the time
        let u = exact_return(&spec, &r, &BasePolicy::Uniform).unwrap();
        assert!((u - 0.125).abs() < 1e-15);
        let pd = performance_difference(&spec, &r, &pi, &BasePolicy::Uniform).unwrap();
        assert!((pd - 0.875).abs() < 1e-12);
        let _ = Trajectory::new(&spec, 0, target).unwrap();
    }

    #[test]
    fn visitation_uniform_levels() {
        let spec = MdpSpec::new(3, 3).unwrap().with_prompt_count(2).unwrap();
        let d = visitation(&spec, &BasePolicy::Uniform).unwrap();
        for h in 1..=3 {
            assert!((d.level_sum(h) - 1.0).abs() < 1e-12);
            for ((s, _a), &p) in d.levels[h - 1].iter() {
                // state probability |A|^{-(h-1)} / |prompts| times 1/|A|
                let expected = 3f64.powi(-(s.tokens.len() as i32)) / 2.0 / 3.0;
                assert!((p - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn concentrability_uniform_vs_deterministic() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let r = Reward::new(&RewardSpec::needle(toks(&[1, 0, 1])), &spec).unwrap();
        let star = optimal_policy(&spec, &r).unwrap();
        let c = concentrability(&spec, &star, &BasePolicy::Uniform).unwrap();
        assert!((c - 8.0).abs() < 1e-12);
        let c1 = concentrability(&spec, &star, &star).unwrap();
        assert_eq!(c1, 1.0);
    }

    #[test]
    fn concentrability_detects_missing_coverage() {
        let spec = MdpSpec::new(2, 2).unwrap();
        let r = Reward::new(&RewardSpec::needle(toks(&[1, 1])), &spec).unwrap();
        let star = optimal_policy(&spec, &r).unwrap();
        // base always plays token 0
        let m = ExactModel::new(&spec, &r).unwrap();
        let zeros = m.greedy_policy(&vec![0.0; m.tree().len()]);
        let base = zeros.to_explicit(m.tree());
        assert!(matches!(concentrability(&spec, &star, &base), Err(Error::NoCoverage(_))));
    }

    #[test]
    fn scalar_kl_matches_hand_value() {
        // single-step MDP, p = (0.25, 0.75), q = (0.5, 0.5)
        let spec = MdpSpec::new(2, 1).unwrap();
        let mut p = ExplicitPolicy::new();
        p.insert(Prefix::root(0), vec![0.25, 0.75]);
        let kl = kl_visitation_sum(&spec, &p, &BasePolicy::Uniform, &p).unwrap();
        let hand = 0.25 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
        assert!((kl - hand).abs() < 1e-15);
        assert_eq!(kl_visitation_sum(&spec, &p, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn invalid_policy_rejected() {
        let spec = MdpSpec::new(2, 1).unwrap();
        let mut p = ExplicitPolicy::new();
        p.insert(Prefix::root(0), vec![0.3, 0.3]);
        let r = Reward::new(&RewardSpec::HashLeaf { seed: 1, scale: 1.0 }, &spec).unwrap();
        assert!(matches!(exact_return(&spec, &r, &p), Err(Error::InvalidPolicy(_))));
    }

    #[test]
    fn value_table_csv_export() {
        let spec = MdpSpec::new(2, 2).unwrap();
        let r = Reward::new(&RewardSpec::HashLeaf { seed: 1, scale: 1.0 }, &spec).unwrap();
        let v = optimal_values(&spec, &r).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        v.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 7);
        assert!(text.lines().nth(1).unwrap().starts_with("0,,"));
    }
}
