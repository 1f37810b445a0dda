//! Token-level finite-horizon MDP.
//!
//! States are prefixes (a prompt plus the tokens generated so far), actions
//! are tokens, transitions append the chosen token, and a reward is revealed
//! only once a trajectory is complete.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix64, unit_f64};

/// Default cap on the number of tree nodes (or leaves) an exhaustive
/// computation may touch.
pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Formats tokens as a space-separated integer string (`"0 1 1"`).
pub fn token_string(tokens: &[TokenId]) -> String {
    let mut out = String::with_capacity(tokens.len() * 2);
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.0.to_string());
    }
    out
}

/// Inverse of [`token_string`]. The empty string is the empty sequence.
pub fn parse_token_string(s: &str) -> Result<Vec<TokenId>> {
    s.split_whitespace()
        .map(|w| {
            w.parse::<u32>()
                .map(TokenId)
                .map_err(|e| Error::Parse(format!("bad token {w:?}: {e}")))
        })
        .collect()
}

fn default_prompts() -> Vec<Vec<u32>> {
    vec![Vec::new()]
}

fn default_r_max() -> f64 {
    1.0
}

/// The MDP tuple: vocabulary, horizon, prompt set (uniform initial
/// distribution), optional early-stop token and the reward bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub vocab_size: usize,
    pub horizon: usize,
    /// Prompt labels. Only their count and position matter; prompt tokens
    /// never count toward the horizon.
    #[serde(default = "default_prompts")]
    pub prompts: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_token: Option<TokenId>,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

impl MdpSpec {
    /// Single empty prompt, no terminal token, `r_max = 1`.
    pub fn new(vocab_size: usize, horizon: usize) -> Result<Self> {
        let spec = Self {
            vocab_size,
            horizon,
            prompts: default_prompts(),
            terminal_token: None,
            r_max: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_prompt_count(mut self, n: usize) -> Result<Self> {
        self.prompts = (0..n as u32).map(|i| vec![i]).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn with_terminal(mut self, token: TokenId) -> Result<Self> {
        self.terminal_token = Some(token);
        self.validate()?;
        Ok(self)
    }

    pub fn with_r_max(mut self, r_max: f64) -> Result<Self> {
        self.r_max = r_max;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidSpec(format!(
                "vocab_size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::InvalidSpec("vocab_size too large".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidSpec("horizon must be >= 1".into()));
        }
        if self.prompts.is_empty() {
            return Err(Error::InvalidSpec("prompts must be non-empty".into()));
        }
        if let Some(t) = self.terminal_token {
            if t.index() >= self.vocab_size {
                return Err(Error::InvalidSpec(format!(
                    "terminal_token {} must be < vocab_size {}",
                    t, self.vocab_size
                )));
            }
        }
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "r_max must be positive and finite, got {}",
                self.r_max
            )));
        }
        Ok(())
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    /// True when no early-stop token is configured.
    pub fn fixed_horizon(&self) -> bool {
        self.terminal_token.is_none()
    }

    pub fn root(&self, prompt_id: usize) -> Prefix {
        Prefix::root(prompt_id)
    }

    pub fn check_token(&self, a: TokenId) -> Result<()> {
        if a.index() >= self.vocab_size {
            return Err(Error::InvalidToken {
                token: a.0,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }

    pub fn check_prompt(&self, prompt_id: usize) -> Result<()> {
        if prompt_id >= self.prompts.len() {
            return Err(Error::InvalidPrompt {
                prompt_id,
                num_prompts: self.prompts.len(),
            });
        }
        Ok(())
    }

    /// Whether a generated token sequence is a complete trajectory.
    pub fn is_complete(&self, tokens: &[TokenId]) -> bool {
        tokens.len() >= self.horizon
            || matches!((self.terminal_token, tokens.last()), (Some(t), Some(l)) if t == *l)
    }

    /// `|A|^H`, the number of fixed-horizon leaves per prompt.
    pub fn leaf_count(&self) -> Option<u128> {
        (self.vocab_size as u128).checked_pow(self.horizon as u32)
    }

    /// Non-root nodes of one prompt's fixed-horizon tree: `sum_{h=1..H} |A|^h`.
    pub fn tree_node_count(&self) -> Option<u128> {
        let a = self.vocab_size as u128;
        let mut total: u128 = 0;
        let mut level: u128 = 1;
        for _ in 0..self.horizon {
            level = level.checked_mul(a)?;
            total = total.checked_add(level)?;
        }
        Some(total)
    }
}

/// A state `s_h = [x, y_{1:h-1}]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prefix {
    pub prompt_id: usize,
    pub tokens: Vec<TokenId>,
}

impl Prefix {
    pub fn root(prompt_id: usize) -> Self {
        Self {
            prompt_id,
            tokens: Vec::new(),
        }
    }

    pub fn new(prompt_id: usize, tokens: Vec<TokenId>) -> Self {
        Self { prompt_id, tokens }
    }

    /// `h = tokens.len() + 1`.
    #[inline]
    pub fn step(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Appends without validation.
    pub fn child(&self, a: TokenId) -> Prefix {
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(a);
        Prefix {
            prompt_id: self.prompt_id,
            tokens,
        }
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}[{}]", self.prompt_id, token_string(&self.tokens))
    }
}

/// Deterministic append transition.
pub fn transition(spec: &MdpSpec, s: &Prefix, a: TokenId) -> Result<Prefix> {
    if s.step() > spec.horizon {
        return Err(Error::StepOverflow {
            step: s.step(),
            horizon: spec.horizon,
        });
    }
    spec.check_token(a)?;
    spec.check_prompt(s.prompt_id)?;
    if !s.tokens.is_empty() && spec.is_complete(&s.tokens) {
        return Err(Error::Terminated);
    }
    Ok(s.child(a))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_id: usize,
    pub tokens: Vec<TokenId>,
    pub complete: bool,
}

impl Trajectory {
    pub fn new(spec: &MdpSpec, prompt_id: usize, tokens: Vec<TokenId>) -> Result<Self> {
        spec.check_prompt(prompt_id)?;
        if tokens.len() > spec.horizon {
            return Err(Error::StepOverflow {
                step: tokens.len() + 1,
                horizon: spec.horizon,
            });
        }
        for &t in &tokens {
            spec.check_token(t)?;
        }
        let complete = spec.is_complete(&tokens);
        Ok(Self {
            prompt_id,
            tokens,
            complete,
        })
    }

    pub fn from_prefix(spec: &MdpSpec, p: Prefix) -> Result<Self> {
        Self::new(spec, p.prompt_id, p.tokens)
    }

    pub fn as_prefix(&self) -> Prefix {
        Prefix::new(self.prompt_id, self.tokens.clone())
    }

    /// All prefixes `s_1 .. s_{len+1}`, from prompt-only to the full sequence.
    pub fn prefixes(&self) -> impl Iterator<Item = Prefix> + '_ {
        (0..=self.tokens.len()).map(move |k| Prefix::new(self.prompt_id, self.tokens[..k].to_vec()))
    }
}

/// Reward families. All are outcome rewards on complete trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    /// Seeded hash of `(seed, prompt_id, tokens)` mapped uniformly to `[0, scale]`.
    HashLeaf { seed: u64, scale: f64 },
    /// `hit_value` on the target token sequence (for every prompt), `miss_value` elsewhere.
    Needle {
        target: Vec<TokenId>,
        hit_value: f64,
        miss_value: f64,
    },
    /// Sum of `weights[position][token]` over the generated tokens.
    TokenPreference { weights: Vec<Vec<f64>> },
    /// Token-string keyed table; unlisted trajectories score `default_value`.
    ExplicitTable {
        entries: BTreeMap<String, f64>,
        #[serde(default)]
        default_value: f64,
    },
}

impl RewardSpec {
    pub fn needle(target: Vec<TokenId>) -> Self {
        RewardSpec::Needle {
            target,
            hit_value: 1.0,
            miss_value: 0.0,
        }
    }

    /// Reads `(token-string, reward)` rows (no header) into an `ExplicitTable`.
    pub fn load_table_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut entries = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 2 {
                return Err(Error::Parse(format!(
                    "reward table rows need 2 columns, got {}",
                    row.len()
                )));
            }
            let tokens = parse_token_string(&row[0])?;
            let value: f64 = row[1]
                .parse()
                .map_err(|e| Error::Parse(format!("bad reward {:?}: {e}", &row[1])))?;
            entries.insert(token_string(&tokens), value);
        }
        Ok(RewardSpec::ExplicitTable {
            entries,
            default_value: 0.0,
        })
    }
}

fn clamp_reward(v: f64, r_max: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, r_max)
    }
}

/// A reward family bound to an MDP. Stored values are clamped to
/// `[0, r_max]` here, so evaluation never has to.
#[derive(Clone, Debug)]
pub struct Reward {
    kind: RewardKind,
    r_max: f64,
    spec: RewardSpec,
}

#[derive(Clone, Debug)]
enum RewardKind {
    HashLeaf { seed: u64, scale: f64 },
    Needle { target: Vec<TokenId>, hit: f64, miss: f64 },
    TokenPreference { weights: Vec<Vec<f64>> },
    Table { map: HashMap<Vec<TokenId>, f64>, default_value: f64 },
}

impl Reward {
    pub fn new(spec: &RewardSpec, mdp: &MdpSpec) -> Result<Self> {
        mdp.validate()?;
        let r_max = mdp.r_max;
        let kind = match spec {
            RewardSpec::HashLeaf { seed, scale } => {
                if !(scale.is_finite() && *scale >= 0.0) {
                    return Err(Error::InvalidSpec(format!("hash_leaf scale must be >= 0, got {scale}")));
                }
                RewardKind::HashLeaf {
                    seed: *seed,
                    scale: scale.min(r_max),
                }
            }
            RewardSpec::Needle {
                target,
                hit_value,
                miss_value,
            } => {
                for &t in target {
                    mdp.check_token(t)?;
                }
                if target.len() > mdp.horizon || !mdp.is_complete(target) {
                    return Err(Error::InvalidSpec(format!(
                        "needle target [{}] is not a complete trajectory",
                        token_string(target)
                    )));
                }
                RewardKind::Needle {
                    target: target.clone(),
                    hit: clamp_reward(*hit_value, r_max),
                    miss: clamp_reward(*miss_value, r_max),
                }
            }
            RewardSpec::TokenPreference { weights } => {
                for row in weights {
                    if row.len() != mdp.vocab_size {
                        return Err(Error::InvalidSpec(format!(
                            "token_preference rows need {} weights, got {}",
                            mdp.vocab_size,
                            row.len()
                        )));
                    }
                }
                RewardKind::TokenPreference {
                    weights: weights
                        .iter()
                        .map(|row| row.iter().map(|&w| clamp_reward(w, r_max)).collect())
                        .collect(),
                }
            }
            RewardSpec::ExplicitTable {
                entries,
                default_value,
            } => {
                let mut map = HashMap::with_capacity(entries.len());
                for (k, v) in entries {
                    map.insert(parse_token_string(k)?, clamp_reward(*v, r_max));
                }
                RewardKind::Table {
                    map,
                    default_value: clamp_reward(*default_value, r_max),
                }
            }
        };
        Ok(Self {
            kind,
            r_max,
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Reward of a complete trajectory.
    pub fn evaluate(&self, spec: &MdpSpec, tau: &Trajectory) -> Result<f64> {
        if !tau.complete || !spec.is_complete(&tau.tokens) {
            return Err(Error::IncompleteTrajectory {
                len: tau.tokens.len(),
                horizon: spec.horizon,
            });
        }
        Ok(self.score_tokens(tau.prompt_id, &tau.tokens))
    }

    /// Unchecked evaluation on a token sequence assumed complete.
    pub fn score_tokens(&self, prompt_id: usize, tokens: &[TokenId]) -> f64 {
        match &self.kind {
            RewardKind::HashLeaf { seed, scale } => {
                let mut h = mix64(*seed ^ 0xA076_1D64_78BD_642F);
                h = mix64(h ^ prompt_id as u64);
                for t in tokens {
                    h = mix64(h ^ (t.0 as u64 + 1));
                }
                h = mix64(h ^ (tokens.len() as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB));
                unit_f64(h) * scale
            }
            RewardKind::Needle { target, hit, miss } => {
                if tokens == target.as_slice() {
                    *hit
                } else {
                    *miss
                }
            }
            RewardKind::TokenPreference { weights } => {
                let raw: f64 = tokens
                    .iter()
                    .enumerate()
                    .map(|(h, t)| weights.get(h).map_or(0.0, |row| row[t.index()]))
                    .sum();
                // Position weights are clamped individually; the sum of H
                // clamped weights can still exceed r_max.
                raw.min(self.r_max)
            }
            RewardKind::Table { map, default_value } => {
                map.get(tokens).copied().unwrap_or(*default_value)
            }
        }
    }
}

/// Reward of a complete trajectory.
pub fn evaluate_reward(spec: &MdpSpec, reward: &Reward, tau: &Trajectory) -> Result<f64> {
    reward.evaluate(spec, tau)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub reward: f64,
}

impl ScoredTrajectory {
    pub fn score(spec: &MdpSpec, reward: &Reward, trajectory: Trajectory) -> Result<Self> {
        let r = reward.evaluate(spec, &trajectory)?;
        Ok(Self {
            trajectory,
            reward: r,
        })
    }
}

/// Depth-first, lexicographic walk over every complete trajectory of a prompt.
pub struct TrajectoryIter<'a> {
    spec: &'a MdpSpec,
    prompt_id: usize,
    stack: Vec<TokenId>,
    started: bool,
    done: bool,
}

impl<'a> TrajectoryIter<'a> {
    fn descend(&mut self) {
        while !self.spec.is_complete(&self.stack) {
            self.stack.push(TokenId(0));
        }
    }
}

impl Iterator for TrajectoryIter<'_> {
    type Item = Trajectory;

    fn next(&mut self) -> Option<Trajectory> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            self.descend();
        } else {
            let last = self.spec.vocab_size as u32 - 1;
            loop {
                match self.stack.last_mut() {
                    None => {
                        self.done = true;
                        return None;
                    }
                    Some(t) if t.0 == last => {
                        self.stack.pop();
                    }
                    Some(t) => {
                        t.0 += 1;
                        break;
                    }
                }
            }
            self.descend();
        }
        Some(Trajectory {
            prompt_id: self.prompt_id,
            tokens: self.stack.clone(),
            complete: true,
        })
    }
}

/// Every complete trajectory for `prompt_id` exactly once, in lexicographic
/// token order. Refuses instances with more than `cap` fixed-horizon leaves.
pub fn enumerate_trajectories(spec: &MdpSpec, prompt_id: usize, cap: u128) -> Result<TrajectoryIter<'_>> {
    spec.check_prompt(prompt_id)?;
    match spec.leaf_count() {
        Some(n) if n <= cap => {}
        Some(n) => return Err(Error::TooLarge { required: n, cap }),
        None => return Err(Error::TooLarge { required: u128::MAX, cap }),
    }
    Ok(TrajectoryIter {
        spec,
        prompt_id,
        stack: Vec::with_capacity(spec.horizon),
        started: false,
        done: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&t| TokenId(t)).collect()
    }

    #[test]
    fn transition_appends() {
        let spec = MdpSpec::new(4, 5).unwrap();
        let s = Prefix::root(0);
        let s1 = transition(&spec, &s, TokenId(3)).unwrap();
        assert_eq!(s1.tokens, toks(&[3]));
        assert_eq!(s1.step(), 2);
        let s = Prefix::new(0, toks(&[1, 2]));
        let s3 = transition(&spec, &s, TokenId(0)).unwrap();
        assert_eq!(s3.tokens, toks(&[1, 2, 0]));
        assert_eq!(s3.step(), 4);
    }

    #[test]
    fn transition_past_horizon_overflows() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let s = Prefix::new(0, toks(&[0, 1, 0]));
        assert_eq!(s.step(), 4);
        assert!(matches!(
            transition(&spec, &s, TokenId(1)),
            Err(Error::StepOverflow { step: 4, horizon: 3 })
        ));
        // step H is still extendable
        let s = Prefix::new(0, toks(&[0, 1]));
        assert!(transition(&spec, &s, TokenId(1)).is_ok());
    }

    #[test]
    fn transition_rejects_bad_token_and_terminated_prefix() {
        let spec = MdpSpec::new(3, 4).unwrap().with_terminal(TokenId(2)).unwrap();
        assert!(matches!(
            transition(&spec, &Prefix::root(0), TokenId(3)),
            Err(Error::InvalidToken { .. })
        ));
        let done = Prefix::new(0, toks(&[1, 2]));
        assert!(matches!(transition(&spec, &done, TokenId(0)), Err(Error::Terminated)));
    }

    #[test]
    fn spec_validation() {
        assert!(MdpSpec::new(1, 3).is_err());
        assert!(MdpSpec::new(2, 0).is_err());
        assert!(MdpSpec::new(2, 2).unwrap().with_terminal(TokenId(2)).is_err());
        assert!(MdpSpec::new(2, 2).unwrap().with_r_max(0.0).is_err());
    }

    #[test]
    fn needle_rewards() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let target = toks(&[1, 0, 1]);
        let r = Reward::new(&RewardSpec::needle(target.clone()), &spec).unwrap();
        let hit = Trajectory::new(&spec, 0, target).unwrap();
        assert_eq!(r.evaluate(&spec, &hit).unwrap(), 1.0);
        for tau in enumerate_trajectories(&spec, 0, 1000).unwrap() {
            if tau != hit {
                assert_eq!(r.evaluate(&spec, &tau).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn token_preference_sums_positions() {
        let spec = MdpSpec::new(3, 4).unwrap().with_r_max(10.0).unwrap();
        let weights = vec![vec![1.0, 0.0, 0.0]; 4];
        let r = Reward::new(&RewardSpec::TokenPreference { weights: weights.clone() }, &spec).unwrap();
        let zeros = Trajectory::new(&spec, 0, toks(&[0, 0, 0, 0])).unwrap();
        assert_eq!(r.evaluate(&spec, &zeros).unwrap(), 4.0);
        let mixed = Trajectory::new(&spec, 0, toks(&[0, 1, 0, 2])).unwrap();
        assert_eq!(r.evaluate(&spec, &mixed).unwrap(), 2.0);
        // with the default r_max = 1 the sum is capped
        let spec1 = MdpSpec::new(3, 4).unwrap();
        let r1 = Reward::new(&RewardSpec::TokenPreference { weights }, &spec1).unwrap();
        assert_eq!(r1.evaluate(&spec1, &zeros).unwrap(), 1.0);
    }

    #[test]
    fn incomplete_trajectory_rejected() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let r = Reward::new(&RewardSpec::HashLeaf { seed: 1, scale: 1.0 }, &spec).unwrap();
        let tau = Trajectory::new(&spec, 0, toks(&[0, 1])).unwrap();
        assert!(!tau.complete);
        assert!(matches!(r.evaluate(&spec, &tau), Err(Error::IncompleteTrajectory { .. })));
    }

    #[test]
    fn hash_leaf_is_pure_and_bounded() {
        let spec = MdpSpec::new(3, 3).unwrap().with_r_max(2.0).unwrap();
        let r = Reward::new(&RewardSpec::HashLeaf { seed: 9, scale: 5.0 }, &spec).unwrap();
        for tau in enumerate_trajectories(&spec, 0, 1000).unwrap() {
            let a = r.evaluate(&spec, &tau).unwrap();
            let b = r.evaluate(&spec, &tau.clone()).unwrap();
            assert_eq!(a, b);
            assert!((0.0..=2.0).contains(&a));
        }
    }

    #[test]
    fn rewards_clamped_at_construction() {
        let spec = MdpSpec::new(2, 1).unwrap();
        let r = Reward::new(
            &RewardSpec::Needle {
                target: toks(&[0]),
                hit_value: 7.0,
                miss_value: -1.0,
            },
            &spec,
        )
        .unwrap();
        assert_eq!(r.score_tokens(0, &toks(&[0])), 1.0);
        assert_eq!(r.score_tokens(0, &toks(&[1])), 0.0);
    }

    #[test]
    fn enumeration_order_and_cap() {
        let spec = MdpSpec::new(2, 2).unwrap();
        let all: Vec<_> = enumerate_trajectories(&spec, 0, 100)
            .unwrap()
            .map(|t| token_string(&t.tokens))
            .collect();
        assert_eq!(all, vec!["0 0", "0 1", "1 0", "1 1"]);
        let spec = MdpSpec::new(3, 1).unwrap();
        assert_eq!(enumerate_trajectories(&spec, 0, 100).unwrap().count(), 3);
        let spec = MdpSpec::new(2, 30).unwrap();
        assert!(matches!(
            enumerate_trajectories(&spec, 0, 1_000_000),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn enumeration_with_terminal_token() {
        let spec = MdpSpec::new(3, 2).unwrap().with_terminal(TokenId(2)).unwrap();
        let all: Vec<_> = enumerate_trajectories(&spec, 0, 100)
            .unwrap()
            .map(|t| token_string(&t.tokens))
            .collect();
        assert_eq!(all, vec!["0 0", "0 1", "0 2", "1 0", "1 1", "1 2", "2"]);
    }

    #[test]
    fn fig3_tree_node_count() {
        let spec = MdpSpec::new(2, 4).unwrap();
        assert_eq!(spec.tree_node_count(), Some(30));
    }

    #[test]
    fn table_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        std::fs::write(&path, "0 1,0.25\n1 1,0.75\n").unwrap();
        let spec = MdpSpec::new(2, 2).unwrap();
        let r = Reward::new(&RewardSpec::load_table_csv(&path).unwrap(), &spec).unwrap();
        assert_eq!(r.score_tokens(0, &toks(&[0, 1])), 0.25);
        assert_eq!(r.score_tokens(0, &toks(&[1, 1])), 0.75);
        assert_eq!(r.score_tokens(0, &toks(&[0, 0])), 0.0);
    }

    #[test]
    fn trajectory_prefixes_cover_all_steps() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let tau = Trajectory::new(&spec, 0, toks(&[1, 0, 1])).unwrap();
        let p: Vec<_> = tau.prefixes().map(|p| p.tokens.len()).collect();
        assert_eq!(p, vec![0, 1, 2, 3]);
    }
}
