//! Value-function representations and the Monte-Carlo regression fit.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{parse_token_string, token_string, MdpSpec, Prefix, Reward, ScoredTrajectory, Trajectory};
use crate::oracle::ExactModel;
use crate::policy::Policy;

/// Trajectories per shard when fitting. Shards are merged in index order so
/// the fitted table is bit-identical for any worker count.
const SHARD: usize = 1024;

pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueReprChoice {
    Tabular,
    Linear {
        #[serde(default = "default_ridge")]
        lambda: f64,
    },
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

impl Default for ValueReprChoice {
    fn default() -> Self {
        ValueReprChoice::Tabular
    }
}

/// Mean return and number of observations behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabEntry {
    pub mean: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ValueRepr {
    Tabular(HashMap<Prefix, TabEntry>),
    /// Ridge regression on [`linear_features`].
    Linear {
        vocab: usize,
        horizon: usize,
        weights: Vec<f64>,
        lambda: f64,
        r_max: f64,
    },
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lookup {
    pub value: f64,
    /// True when a tabular function had no entry and returned its default.
    pub default_hit: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueFn {
    pub repr: ValueRepr,
    pub default_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDataset {
    pub items: Vec<ScoredTrajectory>,
    pub iteration_tag: usize,
}

impl FitDataset {
    pub fn new(items: Vec<ScoredTrajectory>, iteration_tag: usize) -> Self {
        Self { items, iteration_tag }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.items.iter().map(|i| i.reward).sum::<f64>() / self.items.len() as f64
    }

    /// Rejects items whose stored reward disagrees with `reward`.
    pub fn check_rewards(&self, spec: &MdpSpec, reward: &Reward) -> Result<()> {
        for it in &self.items {
            let r = reward.evaluate(spec, &it.trajectory)?;
            if r != it.reward {
                return Err(Error::InvalidSpec(format!(
                    "stored reward {} differs from {} for {}",
                    it.reward,
                    r,
                    it.trajectory.as_prefix()
                )));
            }
        }
        Ok(())
    }

    /// Writes `prompt_id,tokens,reward` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["prompt_id", "tokens", "reward"])?;
        for it in &self.items {
            w.write_record([
                it.trajectory.prompt_id.to_string(),
                token_string(&it.trajectory.tokens),
                it.reward.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, spec: &MdpSpec, iteration_tag: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut items = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let prompt_id: usize = row
                .get(0)
                .ok_or_else(|| Error::Parse("missing prompt_id".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("prompt_id: {e}")))?;
            let tokens = parse_token_string(row.get(1).unwrap_or(""))?;
            let reward: f64 = row
                .get(2)
                .ok_or_else(|| Error::Parse("missing reward".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("reward: {e}")))?;
            let trajectory = crate::mdp::Trajectory::new(spec, prompt_id, tokens)?;
            items.push(ScoredTrajectory { trajectory, reward });
        }
        Ok(Self { items, iteration_tag })
    }
}

/// `(bias, h/H, one-hot(last token), token counts / h)` with `h` the number
/// of generated tokens. The last two blocks are zero at the prompt.
pub fn linear_features(vocab: usize, horizon: usize, s: &Prefix) -> Vec<f64> {
    let mut x = vec![0.0; 2 + 2 * vocab];
    let h = s.tokens.len();
    x[0] = 1.0;
    x[1] = h as f64 / horizon as f64;
    if let Some(last) = s.tokens.last() {
        x[2 + last.index()] = 1.0;
        for t in &s.tokens {
            x[2 + vocab + t.index()] += 1.0 / h as f64;
        }
    }
    x
}

impl ValueFn {
    pub fn zero() -> Self {
        Self {
            repr: ValueRepr::Zero,
            default_value: 0.0,
        }
    }

    /// Tabular function with count one per entry.
    pub fn from_means(means: HashMap<Prefix, f64>) -> Self {
        let table = means
            .into_iter()
            .map(|(p, mean)| (p, TabEntry { mean, count: 1 }))
            .collect();
        Self {
            repr: ValueRepr::Tabular(table),
            default_value: 0.0,
        }
    }

    pub fn with_default(mut self, default_value: f64) -> Self {
        self.default_value = default_value;
        self
    }

    pub fn lookup(&self, s: &Prefix) -> Lookup {
        match &self.repr {
            ValueRepr::Zero => Lookup {
                value: 0.0,
                default_hit: false,
            },
            ValueRepr::Tabular(t) => match t.get(s) {
                Some(e) => Lookup {
                    value: e.mean,
                    default_hit: false,
                },
                None => Lookup {
                    value: self.default_value,
                    default_hit: true,
                },
            },
            ValueRepr::Linear {
                vocab,
                horizon,
                weights,
                r_max,
                ..
            } => {
                let x = linear_features(*vocab, *horizon, s);
                let y: f64 = x.iter().zip(weights).map(|(a, b)| a * b).sum();
                Lookup {
                    value: y.clamp(0.0, *r_max),
                    default_hit: false,
                }
            }
        }
    }

    pub fn evaluate(&self, s: &Prefix) -> f64 {
        self.lookup(s).value
    }

    pub fn entry(&self, s: &Prefix) -> Option<TabEntry> {
        match &self.repr {
            ValueRepr::Tabular(t) => t.get(s).copied(),
            _ => None,
        }
    }

    /// Number of stored tabular entries (zero for other representations).
    pub fn len(&self) -> usize {
        match &self.repr {
            ValueRepr::Tabular(t) => t.len(),
            _ => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tabular entries sorted by prefix.
    pub fn sorted_entries(&self) -> Vec<(Prefix, TabEntry)> {
        match &self.repr {
            ValueRepr::Tabular(t) => {
                let mut v: Vec<_> = t.iter().map(|(p, e)| (p.clone(), *e)).collect();
                v.sort_by(|a, b| a.0.cmp(&b.0));
                v
            }
            _ => Vec::new(),
        }
    }

    /// `prompt_id,prefix,mean,count` rows in prefix order. Float formatting is
    /// shortest round-trip, so reading the snapshot back is exact.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if !matches!(self.repr, ValueRepr::Tabular(_)) {
            return Err(Error::InvalidConfig("CSV snapshots are tabular only".into()));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["prompt_id", "prefix", "mean", "count"])?;
        for (p, e) in self.sorted_entries() {
            w.write_record([
                p.prompt_id.to_string(),
                token_string(&p.tokens),
                e.mean.to_string(),
                e.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut table = HashMap::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 4 {
                return Err(Error::Parse(format!("value rows need 4 columns, got {}", row.len())));
            }
            let prompt_id: usize = row[0].parse().map_err(|e| Error::Parse(format!("prompt_id: {e}")))?;
            let tokens = parse_token_string(&row[1])?;
            let mean: f64 = row[2].parse().map_err(|e| Error::Parse(format!("mean: {e}")))?;
            let count: u64 = row[3].parse().map_err(|e| Error::Parse(format!("count: {e}")))?;
            if count == 0 || !mean.is_finite() {
                return Err(Error::Parse(format!("bad entry for {}", row[1].to_string())));
            }
            table.insert(Prefix::new(prompt_id, tokens), TabEntry { mean, count });
        }
        Ok(Self {
            repr: ValueRepr::Tabular(table),
            default_value: 0.0,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TabRow {
    prompt_id: usize,
    prefix: String,
    mean: f64,
    count: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ValueFnDoc {
    Tabular {
        default_value: f64,
        entries: Vec<TabRow>,
    },
    Linear {
        default_value: f64,
        vocab: usize,
        horizon: usize,
        weights: Vec<f64>,
        lambda: f64,
        r_max: f64,
    },
    Zero {
        default_value: f64,
    },
}

impl Serialize for ValueFn {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = match &self.repr {
            ValueRepr::Tabular(_) => ValueFnDoc::Tabular {
                default_value: self.default_value,
                entries: self
                    .sorted_entries()
                    .into_iter()
                    .map(|(p, e)| TabRow {
                        prompt_id: p.prompt_id,
                        prefix: token_string(&p.tokens),
                        mean: e.mean,
                        count: e.count,
                    })
                    .collect(),
            },
            ValueRepr::Linear {
                vocab,
                horizon,
                weights,
                lambda,
                r_max,
            } => ValueFnDoc::Linear {
                default_value: self.default_value,
                vocab: *vocab,
                horizon: *horizon,
                weights: weights.clone(),
                lambda: *lambda,
                r_max: *r_max,
            },
            ValueRepr::Zero => ValueFnDoc::Zero {
                default_value: self.default_value,
            },
        };
        doc.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for ValueFn {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        Ok(match ValueFnDoc::deserialize(de)? {
            ValueFnDoc::Tabular { default_value, entries } => {
                let mut table = HashMap::with_capacity(entries.len());
                for r in entries {
                    let tokens = parse_token_string(&r.prefix).map_err(serde::de::Error::custom)?;
                    table.insert(
                        Prefix::new(r.prompt_id, tokens),
                        TabEntry {
                            mean: r.mean,
                            count: r.count,
                        },
                    );
                }
                ValueFn {
                    repr: ValueRepr::Tabular(table),
                    default_value,
                }
            }
            ValueFnDoc::Linear {
                default_value,
                vocab,
                horizon,
                weights,
                lambda,
                r_max,
            } => ValueFn {
                repr: ValueRepr::Linear {
                    vocab,
                    horizon,
                    weights,
                    lambda,
                    r_max,
                },
                default_value,
            },
            ValueFnDoc::Zero { default_value } => ValueFn {
                repr: ValueRepr::Zero,
                default_value,
            },
        })
    }
}

fn fit_tabular(dataset: &FitDataset) -> ValueFn {
    let items = &dataset.items;
    let shards = items.len().div_ceil(SHARD);
    let partial: Vec<HashMap<Prefix, (f64, u64)>> = exec::map_indexed(shards, |k| {
        let mut acc: HashMap<Prefix, (f64, u64)> = HashMap::new();
        for it in &items[k * SHARD..((k + 1) * SHARD).min(items.len())] {
            for p in it.trajectory.prefixes() {
                let e = acc.entry(p).or_insert((0.0, 0));
                e.0 += it.reward;
                e.1 += 1;
            }
        }
        acc
    });
    let mut total: HashMap<Prefix, (f64, u64)> = HashMap::new();
    for shard in partial {
        // iteration order within a shard varies, but each key receives its
        // shard sums in shard order, which is all that matters
        for (p, (s, c)) in shard {
            let e = total.entry(p).or_insert((0.0, 0));
            e.0 += s;
            e.1 += c;
        }
    }
    let table = total
        .into_iter()
        .map(|(p, (s, c))| (p, TabEntry { mean: s / c as f64, count: c }))
        .collect();
    ValueFn {
        repr: ValueRepr::Tabular(table),
        default_value: 0.0,
    }
}

fn fit_linear(spec: &MdpSpec, dataset: &FitDataset, lambda: f64) -> Result<ValueFn> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge lambda must be non-negative, got {lambda}")));
    }
    let vocab = spec.vocab_size;
    let dim = 2 + 2 * vocab;
    let items = &dataset.items;
    let shards = items.len().div_ceil(SHARD);
    let partial: Vec<(DMatrix<f64>, DVector<f64>)> = exec::map_indexed(shards, |k| {
        let mut xtx = DMatrix::<f64>::zeros(dim, dim);
        let mut xty = DVector::<f64>::zeros(dim);
        for it in &items[k * SHARD..((k + 1) * SHARD).min(items.len())] {
            for p in it.trajectory.prefixes() {
                let x = DVector::from_vec(linear_features(vocab, spec.horizon, &p));
                xtx.ger(1.0, &x, &x, 1.0);
                xty.axpy(it.reward, &x, 1.0);
            }
        }
        (xtx, xty)
    });
    let mut xtx = DMatrix::<f64>::zeros(dim, dim);
    let mut xty = DVector::<f64>::zeros(dim);
    for (a, b) in partial {
        xtx += a;
        xty += b;
    }
    for i in 0..dim {
        xtx[(i, i)] += lambda;
    }
    let weights = if lambda == 0.0 {
        let svd = xtx.clone().svd(true, true);
        let tol = 1e-10 * svd.singular_values.max().max(1.0);
        let rank = svd.rank(tol);
        if rank < dim {
            return Err(Error::SingularSystem { rank, dim });
        }
        svd.solve(&xty, tol)
            .map_err(|_| Error::SingularSystem { rank, dim })?
    } else {
        match xtx.clone().cholesky() {
            Some(c) => c.solve(&xty),
            None => {
                let rank = xtx.rank(1e-12);
                return Err(Error::SingularSystem { rank, dim });
            }
        }
    };
    Ok(ValueFn {
        repr: ValueRepr::Linear {
            vocab,
            horizon: spec.horizon,
            weights: weights.iter().copied().collect(),
            lambda,
            r_max: spec.r_max,
        },
        default_value: 0.0,
    })
}

/// Regresses every prefix of every trajectory (prompt-only through the full
/// sequence) onto the trajectory's return.
pub fn fit(spec: &MdpSpec, dataset: &FitDataset, choice: &ValueReprChoice) -> Result<ValueFn> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    match choice {
        ValueReprChoice::Tabular => Ok(fit_tabular(dataset)),
        ValueReprChoice::Linear { lambda } => fit_linear(spec, dataset, *lambda),
    }
}

/// Tabular fit where each trajectory carries a probability weight. Prefixes
/// whose total weight is zero are left out.
pub fn fit_tabular_weighted(items: &[(ScoredTrajectory, f64)]) -> Result<ValueFn> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc: HashMap<Prefix, (f64, f64, u64)> = HashMap::new();
    for (it, w) in items {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidConfig(format!("trajectory weight must be non-negative, got {w}")));
        }
        if *w == 0.0 {
            continue;
        }
        for p in it.trajectory.prefixes() {
            let e = acc.entry(p).or_insert((0.0, 0.0, 0));
            e.0 += w * it.reward;
            e.1 += w;
            e.2 += 1;
        }
    }
    let table = acc
        .into_iter()
        .map(|(p, (s, w, c))| (p, TabEntry { mean: s / w, count: c }))
        .collect();
    Ok(ValueFn {
        repr: ValueRepr::Tabular(table),
        default_value: 0.0,
    })
}

/// Every complete trajectory of the tree with its probability under `pi`.
pub fn weighted_enumeration(model: &ExactModel, pi: &crate::oracle::NodePolicy) -> Result<Vec<(ScoredTrajectory, f64)>> {
    let tree = model.tree();
    let d = model.reach(pi);
    tree.leaves()
        .map(|leaf| {
            let trajectory = Trajectory::from_prefix(model.spec(), tree.prefix(leaf))?;
            Ok((ScoredTrajectory { trajectory, reward: model.leaf_reward(leaf) }, d[leaf]))
        })
        .collect()
}

/// The infinite-sample limit of the tabular fit: exact `V^pi` at every node
/// `pi` reaches with positive probability.
pub fn expected_fit(spec: &MdpSpec, reward: &Reward, pi: &dyn Policy) -> Result<ValueFn> {
    let model = ExactModel::new(spec, reward)?;
    let table = model.tabulate(pi)?;
    Ok(expected_fit_in(&model, &table))
}

/// [`expected_fit`] on an already-built model.
pub fn expected_fit_in(model: &ExactModel, pi: &crate::oracle::NodePolicy) -> ValueFn {
    let v = model.policy_values(pi);
    let d = model.reach(pi);
    let tree = model.tree();
    let mut table = HashMap::new();
    for node in 0..tree.len() {
        if d[node] > 0.0 {
            table.insert(tree.prefix(node), TabEntry { mean: v[node], count: 1 });
        }
    }
    ValueFn {
        repr: ValueRepr::Tabular(table),
        default_value: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{RewardSpec, TokenId, Trajectory};
    use crate::policy::{BasePolicy, ExplicitPolicy};

    fn scored(spec: &MdpSpec, tokens: &[u32], r: f64) -> ScoredTrajectory {
        ScoredTrajectory {
            trajectory: Trajectory::new(spec, 0, tokens.iter().map(|&t| TokenId(t)).collect()).unwrap(),
            reward: r,
        }
    }

    fn pre(tokens: &[u32]) -> Prefix {
        Prefix::new(0, tokens.iter().map(|&t| TokenId(t)).collect())
    }

    #[test]
    fn shared_prefix_mean() {
        let spec = MdpSpec::new(2, 2).unwrap().with_r_max(5.0).unwrap();
        let ds = FitDataset::new(vec![scored(&spec, &[0, 0], 1.0), scored(&spec, &[0, 1], 3.0)], 1);
        let v = fit(&spec, &ds, &ValueReprChoice::Tabular).unwrap();
        assert_eq!(v.evaluate(&pre(&[0])), 2.0);
        assert_eq!(v.evaluate(&pre(&[])), 2.0);
        assert_eq!(v.evaluate(&pre(&[0, 1])), 3.0);
        assert_eq!(v.entry(&pre(&[0])).unwrap().count, 2);
    }

    #[test]
    fn single_trajectory_everywhere() {
        let spec = MdpSpec::new(3, 3).unwrap().with_r_max(5.0).unwrap();
        let ds = FitDataset::new(vec![scored(&spec, &[2, 0, 1], 5.0)], 1);
        let v = fit(&spec, &ds, &ValueReprChoice::Tabular).unwrap();
        assert_eq!(v.len(), 4);
        for p in ds.items[0].trajectory.prefixes() {
            assert_eq!(v.evaluate(&p), 5.0);
        }
    }

    #[test]
    fn unseen_prefix_is_default_hit() {
        let spec = MdpSpec::new(2, 2).unwrap();
        let ds = FitDataset::new(vec![scored(&spec, &[0, 0], 1.0)], 1);
        let v = fit(&spec, &ds, &ValueReprChoice::Tabular).unwrap();
        let l = v.lookup(&pre(&[1]));
        assert_eq!(l, Lookup { value: 0.0, default_hit: true });
        assert_eq!(ValueFn::zero().lookup(&pre(&[1])).default_hit, false);
        assert_eq!(ValueFn::zero().evaluate(&pre(&[1, 1])), 0.0);
    }

    #[test]
    fn empty_dataset() {
        let spec = MdpSpec::new(2, 2).unwrap();
        assert!(matches!(
            fit(&spec, &FitDataset::default(), &ValueReprChoice::Tabular),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn proportional_duplication_recovers_exact_values() {
        // pi(0) = 1/4 everywhere: probability of a leaf with k ones is
        // (1/4)^(3-k) (3/4)^k; duplicate each leaf 64 * that many times
        let spec = MdpSpec::new(2, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 17, scale: 1.0 }, &spec).unwrap();
        let mut pi = ExplicitPolicy::new();
        let model = ExactModel::new(&spec, &reward).unwrap();
        for node in 0..model.tree().interior_len() {
            pi.insert(model.tree().prefix(node), vec![0.25, 0.75]);
        }
        let mut items = Vec::new();
        for leaf in model.tree().leaves() {
            let p = model.tree().prefix(leaf);
            let ones = p.tokens.iter().filter(|t| t.0 == 1).count() as u32;
            let copies = 3u32.pow(ones);
            let tau = Trajectory::from_prefix(&spec, p).unwrap();
            let st = ScoredTrajectory::score(&spec, &reward, tau).unwrap();
            for _ in 0..copies {
                items.push(st.clone());
            }
        }
        assert_eq!(items.len(), 64);
        let v = fit(&spec, &FitDataset::new(items, 1), &ValueReprChoice::Tabular).unwrap();
        let exact = model.policy_values(&model.tabulate(&pi).unwrap());
        for node in 0..model.tree().len() {
            let p = model.tree().prefix(node);
            assert!((v.evaluate(&p) - exact[node]).abs() < 1e-10, "{p}");
        }
    }

    #[test]
    fn expected_fit_uniform_matches_oracle() {
        let spec = MdpSpec::new(3, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 2, scale: 1.0 }, &spec).unwrap();
        let v = expected_fit(&spec, &reward, &BasePolicy::Uniform).unwrap();
        let (vt, _) = crate::oracle::policy_values(&spec, &reward, &BasePolicy::Uniform).unwrap();
        assert_eq!(v.len(), vt.len());
        for (p, x) in vt.iter() {
            assert!((v.evaluate(p) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_fit_deterministic_path_only() {
        let spec = MdpSpec::new(2, 2).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 5, scale: 1.0 }, &spec).unwrap();
        let mut pi = ExplicitPolicy::new();
        pi.insert(pre(&[]), vec![0.0, 1.0]);
        pi.insert(pre(&[0]), vec![0.5, 0.5]);
        pi.insert(pre(&[1]), vec![1.0, 0.0]);
        let v = expected_fit(&spec, &reward, &pi).unwrap();
        let r = reward.score_tokens(0, &[TokenId(1), TokenId(0)]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.evaluate(&pre(&[])), r);
        assert_eq!(v.evaluate(&pre(&[1])), r);
        assert_eq!(v.evaluate(&pre(&[1, 0])), r);
        assert!(v.lookup(&pre(&[0])).default_hit);
    }

    #[test]
    fn needle_root_value() {
        for h in 1..=5 {
            let spec = MdpSpec::new(2, h).unwrap();
            let reward = Reward::new(&RewardSpec::needle(vec![TokenId(1); h]), &spec).unwrap();
            let v = expected_fit(&spec, &reward, &BasePolicy::Uniform).unwrap();
            assert_eq!(v.evaluate(&pre(&[])), 1.0 / 2f64.powi(h as i32));
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let spec = MdpSpec::new(3, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 9, scale: 1.0 }, &spec).unwrap();
        let v = expected_fit(&spec, &reward, &BasePolicy::SeededLogits { seed: 1, temperature: 1.0 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        v.write_csv(&path).unwrap();
        assert_eq!(ValueFn::read_csv(&path).unwrap(), v);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<ValueFn>(&json).unwrap(), v);
    }

    #[test]
    fn fit_idempotent_and_worker_invariant() {
        let spec = MdpSpec::new(3, 4).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 1, scale: 1.0 }, &spec).unwrap();
        let mut rng = crate::rng::RngStream::new(4).rng();
        let items: Vec<_> = (0..5000)
            .map(|_| {
                let toks: Vec<TokenId> = (0..4).map(|_| TokenId(rand::Rng::gen_range(&mut rng, 0..3))).collect();
                ScoredTrajectory::score(&spec, &reward, Trajectory::new(&spec, 0, toks).unwrap()).unwrap()
            })
            .collect();
        let ds = FitDataset::new(items, 1);
        let a = fit(&spec, &ds, &ValueReprChoice::Tabular).unwrap();
        let b = fit(&spec, &ds, &ValueReprChoice::Tabular).unwrap();
        let c = exec::with_workers(1, || fit(&spec, &ds, &ValueReprChoice::Tabular).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn linear_fit_bounded_and_singular_without_ridge() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 3, scale: 1.0 }, &spec).unwrap();
        let items: Vec<_> = crate::mdp::enumerate_trajectories(&spec, 0, 100)
            .unwrap()
            .map(|t| ScoredTrajectory::score(&spec, &reward, t).unwrap())
            .collect();
        let ds = FitDataset::new(items, 1);
        let v = fit(&spec, &ds, &ValueReprChoice::Linear { lambda: DEFAULT_RIDGE }).unwrap();
        let model = ExactModel::new(&spec, &reward).unwrap();
        for n in 0..model.tree().len() {
            let x = v.evaluate(&model.tree().prefix(n));
            assert!((0.0..=1.0).contains(&x));
        }
        // the last-token one-hot and the count block both sum to one past
        // the prompt, so without ridge the design is rank deficient
        assert!(matches!(
            fit(&spec, &ds, &ValueReprChoice::Linear { lambda: 0.0 }),
            Err(Error::SingularSystem { .. })
        ));
    }
}
