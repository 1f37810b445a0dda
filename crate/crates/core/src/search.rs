//! Value-guided chunked beam search and the Best-of-N baseline.
//!
//! Every random draw comes from a stream derived from the caller's
//! [`RngStream`] and the draw's position (round, candidate), so results do not
//! depend on how many workers run the expansions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::ops::{Add, AddAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{token_string, MdpSpec, Prefix, Reward, TokenId, Trajectory};
use crate::policy::{base_dist, sample_token, softmax, BasePolicy, GuidanceStack};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    DiversityFirstBeam,
    PlainBeam,
    StochasticSoftmax { temperature: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalPick {
    ByReward,
    ByValueScore,
}

/// How successor chunks are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    #[default]
    Sampled,
    /// Every parent is extended by every possible chunk (`B` must be `|A|^L`).
    /// Only meant for node-count comparisons on tiny trees.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub beam_width: usize,
    pub successors: usize,
    pub chunk_length: usize,
    #[serde(default = "default_selection")]
    pub selection: Selection,
    #[serde(default = "default_final_pick")]
    pub final_pick: FinalPick,
    #[serde(default)]
    pub expansion: Expansion,
    #[serde(default)]
    pub record_trace: bool,
}

fn default_selection() -> Selection {
    Selection::DiversityFirstBeam
}

fn default_final_pick() -> FinalPick {
    FinalPick::ByReward
}

impl SearchConfig {
    pub fn new(beam_width: usize, successors: usize, chunk_length: usize) -> Self {
        Self {
            beam_width,
            successors,
            chunk_length,
            selection: Selection::DiversityFirstBeam,
            final_pick: FinalPick::ByReward,
            expansion: Expansion::Sampled,
            record_trace: false,
        }
    }

    pub fn with_selection(mut self, s: Selection) -> Self {
        self.selection = s;
        self
    }

    pub fn with_final_pick(mut self, f: FinalPick) -> Self {
        self.final_pick = f;
        self
    }

    pub fn exhaustive(mut self) -> Self {
        self.expansion = Expansion::Exhaustive;
        self
    }

    /// Candidate-set size `U = K * B`.
    pub fn pool_size(&self) -> usize {
        self.beam_width * self.successors
    }

    pub fn validate(&self, spec: &MdpSpec) -> Result<()> {
        if self.beam_width == 0 || self.successors == 0 {
            return Err(Error::InvalidConfig(format!(
                "beam_width and successors must be positive, got K={} B={}",
                self.beam_width, self.successors
            )));
        }
        if self.chunk_length == 0 || self.chunk_length > spec.horizon {
            return Err(Error::InvalidConfig(format!(
                "chunk_length must lie in 1..={}, got {}",
                spec.horizon, self.chunk_length
            )));
        }
        if let Selection::StochasticSoftmax { temperature } = self.selection {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "selection temperature must be positive, got {temperature}"
                )));
            }
        }
        if self.expansion == Expansion::Exhaustive {
            let chunks = (spec.vocab_size as u128).checked_pow(self.chunk_length as u32);
            if chunks != Some(self.successors as u128) {
                return Err(Error::InvalidConfig(format!(
                    "exhaustive expansion needs successors = |A|^L = {}^{}",
                    spec.vocab_size, self.chunk_length
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub tokens_generated: u64,
    pub value_queries: u64,
    pub reward_queries: u64,
    pub nodes_expanded: u64,
    pub default_value_hits: u64,
}

impl AddAssign for CostLedger {
    fn add_assign(&mut self, o: Self) {
        self.tokens_generated += o.tokens_generated;
        self.value_queries += o.value_queries;
        self.reward_queries += o.reward_queries;
        self.nodes_expanded += o.nodes_expanded;
        self.default_value_hits += o.default_value_hits;
    }
}

impl Add for CostLedger {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub prefix: Prefix,
    pub score: f64,
    pub complete: bool,
    /// Base log-probability of the newest chunk.
    pub chunk_logprob: f64,
}

/// One select-then-expand round, for JSON Lines traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
    pub parents: Vec<usize>,
    pub ledger: CostLedger,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub trajectory: Trajectory,
    /// Reward of the returned trajectory when the search queried it.
    pub reward: Option<f64>,
    pub score: f64,
    pub ledger: CostLedger,
    pub trace: Vec<RoundTrace>,
}

/// Higher score first, then lexicographically smaller tokens, then lower index.
fn rank_cmp(a: (f64, &Prefix, usize), b: (f64, &Prefix, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
        .then_with(|| a.2.cmp(&b.2))
}

fn ranked(candidates: &[Candidate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&i, &j| {
        rank_cmp(
            (candidates[i].score, &candidates[i].prefix, i),
            (candidates[j].score, &candidates[j].prefix, j),
        )
    });
    idx
}

/// Plain top-`k` by score.
pub fn top_k_select(candidates: &[Candidate], k: usize) -> Vec<usize> {
    let mut r = ranked(candidates);
    r.truncate(k);
    r
}

/// Clusters identical sequences, orders clusters by their best member, and
/// takes one member per cluster per pass until `k` parents are chosen.
pub fn diversity_first_select(candidates: &[Candidate], k: usize) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    // clusters appear in rank order of their best member
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot: BTreeMap<&Prefix, usize> = BTreeMap::new();
    for i in ranked(candidates) {
        match slot.get(&candidates[i].prefix) {
            Some(&c) => clusters[c].push(i),
            None => {
                slot.insert(&candidates[i].prefix, clusters.len());
                clusters.push(vec![i]);
            }
        }
    }
    let mut out = Vec::with_capacity(k);
    let mut pass = 0;
    while out.len() < k {
        for c in &clusters {
            if out.len() == k {
                break;
            }
            out.push(c[pass % c.len()]);
        }
        pass += 1;
    }
    out
}

/// Draws `k` parents without replacement from `softmax(score / temperature)`.
pub fn stochastic_guided_step<R: Rng + ?Sized>(
    candidates: &[Candidate],
    temperature: f64,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    let mut out = Vec::with_capacity(k);
    while out.len() < k && !remaining.is_empty() {
        let logits: Vec<f64> = remaining.iter().map(|&i| candidates[i].score / temperature).collect();
        let p = softmax(&logits);
        let pick = sample_token(&p, rng).index();
        out.push(remaining.remove(pick));
    }
    out
}

pub fn select_parents(cfg: &SearchConfig, candidates: &[Candidate], stream: &RngStream) -> Vec<usize> {
    match cfg.selection {
        Selection::DiversityFirstBeam => diversity_first_select(candidates, cfg.beam_width),
        Selection::PlainBeam => top_k_select(candidates, cfg.beam_width),
        Selection::StochasticSoftmax { temperature } => {
            stochastic_guided_step(candidates, temperature, cfg.beam_width, &mut stream.rng())
        }
    }
}

/// Appends up to `len` base-sampled tokens, stopping at completion.
/// Returns the extended prefix and the chunk's base log-probability.
pub fn sample_chunk(
    spec: &MdpSpec,
    base: &BasePolicy,
    start: &Prefix,
    len: usize,
    stream: &RngStream,
) -> Result<(Prefix, f64)> {
    let mut rng = stream.rng();
    let mut p = start.clone();
    let mut logp = 0.0;
    for _ in 0..len {
        if spec.is_complete(&p.tokens) {
            break;
        }
        let d = base_dist(base, spec, &p)?;
        let a = sample_token(&d, &mut rng);
        logp += d[a.index()].ln();
        p.tokens.push(a);
    }
    Ok((p, logp))
}

/// The `index`-th chunk of length `len` in lexicographic order (truncated at
/// completion), with its base log-probability.
fn enumerated_chunk(
    spec: &MdpSpec,
    base: &BasePolicy,
    start: &Prefix,
    len: usize,
    index: usize,
) -> Result<(Prefix, f64)> {
    let v = spec.vocab_size;
    let mut digits = vec![0u32; len];
    let mut x = index;
    for d in digits.iter_mut().rev() {
        *d = (x % v) as u32;
        x /= v;
    }
    let mut p = start.clone();
    let mut logp = 0.0;
    for &a in &digits {
        if spec.is_complete(&p.tokens) {
            break;
        }
        let d = base_dist(base, spec, &p)?;
        logp += d[a as usize].ln();
        p.tokens.push(TokenId(a));
    }
    Ok((p, logp))
}

/// A full base rollout from the prompt.
pub fn sample_rollout(spec: &MdpSpec, base: &BasePolicy, prompt_id: usize, stream: &RngStream) -> Result<Trajectory> {
    let (p, _) = sample_chunk(spec, base, &spec.root(prompt_id), spec.horizon, stream)?;
    Trajectory::from_prefix(spec, p)
}

fn record_nodes(seen: &mut HashSet<Prefix>, start_len: usize, p: &Prefix) {
    for k in start_len + 1..=p.tokens.len() {
        let q = Prefix::new(p.prompt_id, p.tokens[..k].to_vec());
        seen.insert(q);
    }
}

fn score_all(
    stack: &GuidanceStack,
    candidates: &mut [Candidate],
    ledger: &mut CostLedger,
) {
    let scores = exec::map_indexed(candidates.len(), |j| stack.score_detailed(&candidates[j].prefix));
    for (c, s) in candidates.iter_mut().zip(scores) {
        c.score = s.score;
        if stack.include_base_logprob {
            c.score += c.chunk_logprob;
        }
        ledger.default_value_hits += s.default_hits;
    }
    ledger.value_queries += (candidates.len() * stack.len()) as u64;
}

/// Index of the best `(value, prefix)` pair under [`rank_cmp`].
fn argmax_by(values: &[f64], prefixes: &[&Prefix]) -> usize {
    (0..values.len())
        .min_by(|&i, &j| rank_cmp((values[i], prefixes[i], i), (values[j], prefixes[j], j)))
        .expect("non-empty")
}

/// Chunked value-guided beam search for one prompt.
pub fn guided_generate(
    spec: &MdpSpec,
    reward: &Reward,
    base: &BasePolicy,
    stack: &GuidanceStack,
    cfg: &SearchConfig,
    prompt_id: usize,
    stream: &RngStream,
) -> Result<SearchOutcome> {
    cfg.validate(spec)?;
    spec.check_prompt(prompt_id)?;
    let u = cfg.pool_size();
    let l = cfg.chunk_length;
    let root = spec.root(prompt_id);
    let exhaustive = cfg.expansion == Expansion::Exhaustive;

    let mut ledger = CostLedger::default();
    let mut seen = HashSet::new();
    let mut trace = Vec::new();

    let expand = |parent: &Prefix, round: usize, j: usize, which: usize| -> Result<(Prefix, f64)> {
        if exhaustive {
            enumerated_chunk(spec, base, parent, l, which)
        } else {
            sample_chunk(spec, base, parent, l, &stream.derive("expand", (round * u + j) as u64))
        }
    };

    let first = exec::try_map_indexed(u, |j| expand(&root, 0, j, j % cfg.successors))?;
    let mut candidates: Vec<Candidate> = first
        .into_iter()
        .map(|(p, lp)| {
            ledger.tokens_generated += p.tokens.len() as u64;
            record_nodes(&mut seen, 0, &p);
            Candidate {
                complete: spec.is_complete(&p.tokens),
                prefix: p,
                score: 0.0,
                chunk_logprob: lp,
            }
        })
        .collect();

    let mut round = 0;
    while candidates.iter().any(|c| !c.complete) {
        round += 1;
        score_all(stack, &mut candidates, &mut ledger);
        // with nothing to score, every candidate keeps its own lineage, so the
        // search is U independent base rollouts
        let parents = if stack.is_empty() && !stack.include_base_logprob {
            (0..candidates.len()).collect()
        } else {
            select_parents(cfg, &candidates, &stream.derive("select", round as u64))
        };
        if cfg.record_trace {
            trace.push(RoundTrace {
                round,
                candidates: candidates.iter().map(|c| token_string(&c.prefix.tokens)).collect(),
                scores: candidates.iter().map(|c| c.score).collect(),
                parents: parents.clone(),
                ledger,
            });
        }

        // complete parents keep one frozen slot each, the rest of the pool is
        // dealt round-robin to the incomplete parents
        let (done, open): (Vec<usize>, Vec<usize>) = parents.iter().partition(|&&p| candidates[p].complete);
        let mut slots: Vec<(usize, bool)> = done.iter().map(|&p| (p, false)).collect();
        let src: &[usize] = if open.is_empty() { &done } else { &open };
        let mut k = 0;
        while slots.len() < u {
            slots.push((src[k % src.len()], !open.is_empty()));
            k += 1;
        }
        // successors of the same parent take consecutive chunk indices
        let mut per_parent: BTreeMap<usize, usize> = BTreeMap::new();
        let jobs: Vec<(usize, bool, usize)> = slots
            .into_iter()
            .map(|(p, extend)| {
                let n = per_parent.entry(p).or_insert(0);
                let which = *n;
                *n += 1;
                (p, extend, which)
            })
            .collect();

        let next = exec::try_map_indexed(u, |j| {
            let (p, extend, which) = jobs[j];
            let parent = &candidates[p];
            if extend {
                expand(&parent.prefix, round, j, which % cfg.successors)
            } else {
                Ok((parent.prefix.clone(), parent.chunk_logprob))
            }
        })?;
        let mut new_candidates = Vec::with_capacity(u);
        for (j, (prefix, lp)) in next.into_iter().enumerate() {
            let start = candidates[jobs[j].0].prefix.tokens.len();
            ledger.tokens_generated += (prefix.tokens.len() - start) as u64;
            record_nodes(&mut seen, start, &prefix);
            new_candidates.push(Candidate {
                complete: spec.is_complete(&prefix.tokens),
                prefix,
                score: 0.0,
                chunk_logprob: lp,
            });
        }
        candidates = new_candidates;
    }

    let (best, rew) = match cfg.final_pick {
        FinalPick::ByReward => {
            let r: Vec<f64> = candidates
                .iter()
                .map(|c| reward.score_tokens(c.prefix.prompt_id, &c.prefix.tokens))
                .collect();
            ledger.reward_queries += u as u64;
            let prefixes: Vec<&Prefix> = candidates.iter().map(|c| &c.prefix).collect();
            let b = argmax_by(&r, &prefixes);
            (b, Some(r[b]))
        }
        FinalPick::ByValueScore => {
            score_all(stack, &mut candidates, &mut ledger);
            let s: Vec<f64> = candidates.iter().map(|c| c.score).collect();
            let prefixes: Vec<&Prefix> = candidates.iter().map(|c| &c.prefix).collect();
            (argmax_by(&s, &prefixes), None)
        }
    };
    ledger.nodes_expanded = seen.len() as u64;
    let c = &candidates[best];
    Ok(SearchOutcome {
        trajectory: Trajectory::from_prefix(spec, c.prefix.clone())?,
        reward: rew,
        score: c.score,
        ledger,
        trace,
    })
}

/// `n` independent base rollouts, best by reward.
pub fn bon_generate(
    spec: &MdpSpec,
    reward: &Reward,
    base: &BasePolicy,
    n: usize,
    prompt_id: usize,
    stream: &RngStream,
) -> Result<SearchOutcome> {
    if n == 0 {
        return Err(Error::InvalidConfig("best-of-n needs n >= 1".into()));
    }
    spec.check_prompt(prompt_id)?;
    let rollouts = exec::try_map_indexed(n, |i| sample_rollout(spec, base, prompt_id, &stream.derive("bon", i as u64)))?;
    Ok(pick_best(reward, rollouts))
}

/// Scores every complete trajectory of the prompt (the whole tree).
pub fn bon_exhaustive(spec: &MdpSpec, reward: &Reward, prompt_id: usize, cap: u128) -> Result<SearchOutcome> {
    let all: Vec<Trajectory> = crate::mdp::enumerate_trajectories(spec, prompt_id, cap)?.collect();
    Ok(pick_best(reward, all))
}

fn pick_best(reward: &Reward, rollouts: Vec<Trajectory>) -> SearchOutcome {
    let mut ledger = CostLedger::default();
    let mut seen = HashSet::new();
    let r: Vec<f64> = rollouts.iter().map(|t| reward.score_tokens(t.prompt_id, &t.tokens)).collect();
    let prefixes: Vec<Prefix> = rollouts.iter().map(|t| t.as_prefix()).collect();
    for p in &prefixes {
        ledger.tokens_generated += p.tokens.len() as u64;
        record_nodes(&mut seen, 0, p);
    }
    ledger.reward_queries = rollouts.len() as u64;
    ledger.nodes_expanded = seen.len() as u64;
    let refs: Vec<&Prefix> = prefixes.iter().collect();
    let best = argmax_by(&r, &refs);
    SearchOutcome {
        trajectory: rollouts[best].clone(),
        reward: Some(r[best]),
        score: 0.0,
        ledger,
        trace: Vec::new(),
    }
}
