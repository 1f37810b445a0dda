//! The iterative reweight-then-optimize loop.
//!
//! Iteration `t` (1-based) draws `D_t` from the current guided policy
//! (`pi_hat_{t-1}`, the base policy when `t = 1`), fits a value function on it
//! and pushes it onto the guidance stack with `beta = schedule(t - 1)`.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{MdpSpec, Reward, ScoredTrajectory, Trajectory};
use crate::oracle::{ExactModel, NodePolicy};
use crate::policy::{reweighted_dist, sample_token, BasePolicy, GuidanceStack};
use crate::rng::RngStream;
use crate::search::{guided_generate, sample_rollout, CostLedger, SearchConfig};
use crate::value_fn::{expected_fit_in, fit, FitDataset, ValueFn, ValueReprChoice};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Constant { beta: f64 },
    /// `beta_t = sqrt(t + 1) / omega`; `omega` defaults to the automatic choice.
    TheoremSqrt {
        #[serde(default)]
        omega: Option<f64>,
    },
    Explicit { betas: Vec<f64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScheduleContext {
    pub c_st: Option<f64>,
    pub r_max: f64,
    pub iterations: usize,
}

/// `omega = sqrt(2 log C_ST / (r_max^2 log T))`.
pub fn auto_omega(c_st: f64, r_max: f64, iterations: usize) -> Result<f64> {
    if !(c_st > 1.0) {
        return Err(Error::ScheduleDomain(format!("automatic omega needs C_ST > 1, got {c_st}")));
    }
    if iterations < 2 {
        return Err(Error::ScheduleDomain(format!("automatic omega needs T >= 2, got {iterations}")));
    }
    Ok((2.0 * c_st.ln() / (r_max * r_max * (iterations as f64).ln())).sqrt())
}

pub fn schedule_beta(s: &BetaSchedule, t: usize, ctx: &ScheduleContext) -> Result<f64> {
    let beta = match s {
        BetaSchedule::Constant { beta } => *beta,
        BetaSchedule::TheoremSqrt { omega } => {
            let w = match omega {
                Some(w) => *w,
                None => {
                    let c = ctx
                        .c_st
                        .ok_or_else(|| Error::ScheduleDomain("automatic omega needs a known C_ST".into()))?;
                    auto_omega(c, ctx.r_max, ctx.iterations)?
                }
            };
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::ScheduleDomain(format!("omega must be positive, got {w}")));
            }
            ((t + 1) as f64).sqrt() / w
        }
        BetaSchedule::Explicit { betas } => *betas.get(t).ok_or_else(|| {
            Error::ScheduleDomain(format!("explicit schedule has {} entries, needed index {t}", betas.len()))
        })?,
    };
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    Ok(beta)
}

/// How `D_t` is drawn from `pi_hat_{t-1}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Chunked value-guided beam search.
    #[default]
    GuidedSearch,
    /// Token-by-token ancestral sampling from the reweighted policy.
    ExactReweighted,
}

/// Where the value function pushed at each iteration comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Regress on the sampled dataset.
    #[default]
    MonteCarlo,
    /// Exact `V^{pi_hat_{t-1}}` from the oracle; no data is drawn.
    Expected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IroConfig {
    pub iterations: usize,
    pub samples_per_iteration: usize,
    pub search: SearchConfig,
    #[serde(default)]
    pub value_repr: ValueReprChoice,
    pub schedule: BetaSchedule,
    /// Prompts drawn per iteration; all prompts when absent.
    #[serde(default)]
    pub prompt_subset_size: Option<usize>,
    pub master_seed: u64,
    #[serde(default)]
    pub generation: GenerationMode,
    #[serde(default)]
    pub fit_mode: FitMode,
    /// Monte Carlo evaluation rollouts per iteration (0 disables).
    #[serde(default)]
    pub n_eval: usize,
    /// Record exact returns and gaps when the tree fits under the oracle cap.
    #[serde(default = "yes")]
    pub exact_eval: bool,
}

fn yes() -> bool {
    true
}

impl IroConfig {
    pub fn new(iterations: usize, samples_per_iteration: usize, search: SearchConfig, schedule: BetaSchedule) -> Self {
        Self {
            iterations,
            samples_per_iteration,
            search,
            value_repr: ValueReprChoice::Tabular,
            schedule,
            prompt_subset_size: None,
            master_seed: 0,
            generation: GenerationMode::GuidedSearch,
            fit_mode: FitMode::MonteCarlo,
            n_eval: 0,
            exact_eval: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn validate(&self, spec: &MdpSpec) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.samples_per_iteration == 0 {
            return Err(Error::InvalidConfig("samples_per_iteration must be at least 1".into()));
        }
        self.search.validate(spec)?;
        if let Some(k) = self.prompt_subset_size {
            if k == 0 || k > spec.num_prompts() {
                return Err(Error::InvalidConfig(format!(
                    "prompt_subset_size must lie in 1..={}, got {k}",
                    spec.num_prompts()
                )));
            }
        }
        match &self.schedule {
            BetaSchedule::Constant { beta } if !(beta.is_finite() && *beta > 0.0) => {
                return Err(Error::InvalidConfig(format!("schedule.beta must be positive, got {beta}")));
            }
            BetaSchedule::TheoremSqrt { omega: Some(w) } if !(w.is_finite() && *w > 0.0) => {
                return Err(Error::InvalidConfig(format!("schedule.omega must be positive, got {w}")));
            }
            BetaSchedule::Explicit { betas } => {
                if betas.len() < self.iterations {
                    return Err(Error::InvalidConfig(format!(
                        "schedule.betas has {} entries but iterations = {}",
                        betas.len(),
                        self.iterations
                    )));
                }
                if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
                    return Err(Error::InvalidConfig(format!("schedule.betas must be positive, got {b}")));
                }
            }
            _ => {}
        }
        if let ValueReprChoice::Linear { lambda } = self.value_repr {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::InvalidConfig(format!("value_repr.lambda must be non-negative, got {lambda}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub beta: f64,
    pub stack_size: usize,
    /// Tabular entries in the value function fitted at this iteration.
    pub value_entries: usize,
    /// Mean reward of `D_t` (absent when no data was drawn).
    pub train_mean_reward: Option<f64>,
    pub mc_mean: Option<f64>,
    pub mc_stderr: Option<f64>,
    /// `J(pi_hat_t)` under the exact reweighted policy.
    pub exact_return: Option<f64>,
    /// `J(pi*) - J(pi_hat_t)`.
    pub exact_gap: Option<f64>,
    pub ledger: CostLedger,
    pub ledger_total: CostLedger,
}

/// Exact quantities available when the instance is small enough.
pub struct OracleContext {
    pub model: ExactModel,
    pub base_table: NodePolicy,
    pub optimal_return: f64,
    pub base_return: f64,
    /// `None` when the base policy misses part of the optimal path.
    pub c_st: Option<f64>,
}

impl OracleContext {
    pub fn new(spec: &MdpSpec, reward: &Reward, base: &BasePolicy) -> Result<Self> {
        let model = ExactModel::new(spec, reward)?;
        let base_table = model.tabulate(base)?;
        let optimal_return = model.optimal_return();
        let base_return = model.exact_return(&base_table);
        let c_st = match model.concentrability(&model.optimal_policy(), &base_table) {
            Ok(c) => Some(c),
            Err(Error::NoCoverage(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            model,
            base_table,
            optimal_return,
            base_return,
            c_st,
        })
    }

    /// `pi_base * exp(stack score)` tabulated on the tree.
    pub fn reweighted_table(&self, stack: &GuidanceStack) -> NodePolicy {
        if stack.is_empty() {
            return self.base_table.clone();
        }
        let tree = self.model.tree();
        // stack scores per node, computed once
        let scores = exec::map_indexed(tree.len(), |n| {
            if n < tree.num_prompts() {
                0.0
            } else {
                stack.score(&tree.prefix(n))
            }
        });
        self.model.reweight_with(&self.base_table, 1.0, |c| scores[c])
    }

    pub fn gap_of(&self, stack: &GuidanceStack) -> (f64, f64) {
        let j = self.model.exact_return(&self.reweighted_table(stack));
        (j, self.optimal_return - j)
    }
}

/// Mean and standard error of rewards.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    // shifted by the first sample so constant inputs come out exact
    let k = xs[0];
    let d = xs.iter().map(|x| x - k).sum::<f64>() / n;
    let mean = k + d;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - k - d) * (x - k - d)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ancestral sampling from `pi_base * exp(stack score)`.
pub fn sample_reweighted(
    spec: &MdpSpec,
    base: &BasePolicy,
    stack: &GuidanceStack,
    prompt_id: usize,
    stream: &RngStream,
) -> Result<(Trajectory, CostLedger)> {
    let mut rng = stream.rng();
    let mut p = spec.root(prompt_id);
    let mut ledger = CostLedger::default();
    while !spec.is_complete(&p.tokens) {
        let d = reweighted_dist(base, stack, spec, &p)?;
        ledger.value_queries += (spec.vocab_size * stack.len()) as u64;
        p.tokens.push(sample_token(&d, &mut rng));
        ledger.tokens_generated += 1;
    }
    Ok((Trajectory::from_prefix(spec, p)?, ledger))
}

/// One trajectory from `pi_hat` as realized by `mode`. Reward queries made
/// inside search are included in the ledger; scoring the result is not.
#[allow(clippy::too_many_arguments)]
pub fn generate_one(
    spec: &MdpSpec,
    reward: &Reward,
    base: &BasePolicy,
    stack: &GuidanceStack,
    search: &SearchConfig,
    mode: GenerationMode,
    prompt_id: usize,
    stream: &RngStream,
) -> Result<(Trajectory, CostLedger)> {
    if stack.is_empty() {
        let t = sample_rollout(spec, base, prompt_id, stream)?;
        let ledger = CostLedger {
            tokens_generated: t.tokens.len() as u64,
            ..CostLedger::default()
        };
        return Ok((t, ledger));
    }
    match mode {
        GenerationMode::GuidedSearch => {
            let out = guided_generate(spec, reward, base, stack, search, prompt_id, stream)?;
            Ok((out.trajectory, out.ledger))
        }
        GenerationMode::ExactReweighted => sample_reweighted(spec, base, stack, prompt_id, stream),
    }
}

/// Monte Carlo estimate of the guided policy's return (base rollouts for an
/// empty stack), over prompts in round-robin order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy_mc(
    spec: &MdpSpec,
    reward: &Reward,
    base: &BasePolicy,
    stack: &GuidanceStack,
    search: &SearchConfig,
    mode: GenerationMode,
    n_eval: usize,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    let rewards = exec::try_map_indexed(n_eval, |i| {
        let (t, _) = generate_one(
            spec,
            reward,
            base,
            stack,
            search,
            mode,
            i % spec.num_prompts(),
            &stream.derive("eval", i as u64),
        )?;
        reward.evaluate(spec, &t)
    })?;
    Ok(mean_stderr(&rewards))
}

/// Serializable loop state; enough to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: IroConfig,
    pub t: usize,
    pub betas: Vec<f64>,
    pub values: Vec<ValueFn>,
    pub records: Vec<IterationRecord>,
    pub ledger_total: CostLedger,
}

pub struct IroRunner<'a> {
    spec: &'a MdpSpec,
    reward: &'a Reward,
    base: &'a BasePolicy,
    cfg: IroConfig,
    master: RngStream,
    oracle: Option<OracleContext>,
    stack: GuidanceStack,
    values: Vec<Arc<ValueFn>>,
    records: Vec<IterationRecord>,
    ledger_total: CostLedger,
    last_dataset: Option<FitDataset>,
}

impl<'a> IroRunner<'a> {
    pub fn new(spec: &'a MdpSpec, reward: &'a Reward, base: &'a BasePolicy, cfg: IroConfig) -> Result<Self> {
        spec.validate()?;
        base.validate()?;
        cfg.validate(spec)?;
        let oracle = if cfg.exact_eval || cfg.fit_mode == FitMode::Expected {
            match OracleContext::new(spec, reward, base) {
                Ok(o) => Some(o),
                Err(Error::TooLarge { .. }) if cfg.fit_mode == FitMode::MonteCarlo => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let master = RngStream::new(cfg.master_seed);
        let runner = Self {
            spec,
            reward,
            base,
            cfg,
            master,
            oracle,
            stack: GuidanceStack::new(),
            values: Vec::new(),
            records: Vec::new(),
            ledger_total: CostLedger::default(),
            last_dataset: None,
        };
        // surface schedule errors before any work
        for t in 0..runner.cfg.iterations {
            schedule_beta(&runner.cfg.schedule, t, &runner.schedule_context())?;
        }
        Ok(runner)
    }

    pub fn resume(spec: &'a MdpSpec, reward: &'a Reward, base: &'a BasePolicy, ck: Checkpoint) -> Result<Self> {
        if ck.betas.len() != ck.t || ck.values.len() != ck.t || ck.records.len() != ck.t {
            return Err(Error::Parse("inconsistent checkpoint".into()));
        }
        let mut r = Self::new(spec, reward, base, ck.config)?;
        for (v, b) in ck.values.into_iter().zip(ck.betas) {
            let v = Arc::new(v);
            r.stack.push(v.clone(), b)?;
            r.values.push(v);
        }
        r.records = ck.records;
        r.ledger_total = ck.ledger_total;
        Ok(r)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.checkpoint())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            t: self.records.len(),
            betas: self.stack.betas(),
            values: self.values.iter().map(|v| (**v).clone()).collect(),
            records: self.records.clone(),
            ledger_total: self.ledger_total,
        }
    }

    pub fn schedule_context(&self) -> ScheduleContext {
        ScheduleContext {
            c_st: self.oracle.as_ref().and_then(|o| o.c_st),
            r_max: self.spec.r_max,
            iterations: self.cfg.iterations,
        }
    }

    pub fn config(&self) -> &IroConfig {
        &self.cfg
    }

    pub fn oracle(&self) -> Option<&OracleContext> {
        self.oracle.as_ref()
    }

    pub fn stack(&self) -> &GuidanceStack {
        &self.stack
    }

    pub fn values(&self) -> &[Arc<ValueFn>] {
        &self.values
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn last_dataset(&self) -> Option<&FitDataset> {
        self.last_dataset.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.records.len() >= self.cfg.iterations
    }

    fn prompt_subset(&self, t: usize) -> Vec<usize> {
        let n = self.spec.num_prompts();
        let k = self.cfg.prompt_subset_size.unwrap_or(n);
        if k == n {
            return (0..n).collect();
        }
        let mut rng = self.master.derive("prompts", t as u64).rng();
        sample_indices(&mut rng, n, k).into_vec()
    }

    fn draw_dataset(&self, t: usize) -> Result<(FitDataset, CostLedger)> {
        let prompts = self.prompt_subset(t);
        let stream = self.master.derive("generate", t as u64);
        let m = self.cfg.samples_per_iteration;
        let out = exec::try_map_indexed(m, |i| {
            let (traj, ledger) = generate_one(
                self.spec,
                self.reward,
                self.base,
                &self.stack,
                &self.cfg.search,
                self.cfg.generation,
                prompts[i % prompts.len()],
                &stream.derive("item", i as u64),
            )?;
            Ok::<_, Error>((ScoredTrajectory::score(self.spec, self.reward, traj)?, ledger))
        })?;
        let mut ledger = CostLedger::default();
        let mut items = Vec::with_capacity(m);
        for (st, l) in out {
            ledger += l;
            items.push(st);
        }
        ledger.reward_queries += m as u64;
        Ok((FitDataset::new(items, t), ledger))
    }

    /// Runs iteration `t = records.len() + 1`.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        if self.is_done() {
            return Err(Error::InvalidConfig(format!(
                "all {} iterations already ran",
                self.cfg.iterations
            )));
        }
        let t = self.records.len() + 1;
        let (value, train_mean, ledger) = match self.cfg.fit_mode {
            FitMode::MonteCarlo => {
                let (ds, ledger) = self.draw_dataset(t)?;
                let v = fit(self.spec, &ds, &self.cfg.value_repr)?;
                let mean = ds.mean_reward();
                self.last_dataset = Some(ds);
                (v, Some(mean), ledger)
            }
            FitMode::Expected => {
                let o = self.oracle.as_ref().expect("expected fit requires the oracle");
                let table = o.reweighted_table(&self.stack);
                (expected_fit_in(&o.model, &table), None, CostLedger::default())
            }
        };
        let beta = schedule_beta(&self.cfg.schedule, t - 1, &self.schedule_context())?;
        let value_entries = value.len();
        let v = Arc::new(value);
        self.stack.push(v.clone(), beta)?;
        self.values.push(v);

        let (exact_return, exact_gap) = match (&self.oracle, self.cfg.exact_eval) {
            (Some(o), true) => {
                let (j, g) = o.gap_of(&self.stack);
                (Some(j), Some(g))
            }
            _ => (None, None),
        };
        let (mc_mean, mc_stderr) = if self.cfg.n_eval > 0 {
            let (m, s) = evaluate_policy_mc(
                self.spec,
                self.reward,
                self.base,
                &self.stack,
                &self.cfg.search,
                self.cfg.generation,
                self.cfg.n_eval,
                &self.master.derive("evaluate", t as u64),
            )?;
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        self.ledger_total += ledger;
        self.records.push(IterationRecord {
            t,
            beta,
            stack_size: self.stack.len(),
            value_entries,
            train_mean_reward: train_mean,
            mc_mean,
            mc_stderr,
            exact_return,
            exact_gap,
            ledger,
            ledger_total: self.ledger_total,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }
}

/// Result of a complete run.
#[derive(Clone, Debug)]
pub struct IroRun {
    pub records: Vec<IterationRecord>,
    pub stack: GuidanceStack,
    pub optimal_return: Option<f64>,
    pub base_return: Option<f64>,
    pub c_st: Option<f64>,
}

impl IroRun {
    /// `J(pi*) - J(pi_base)`, the gap before any iteration.
    pub fn base_gap(&self) -> Option<f64> {
        Some(self.optimal_return? - self.base_return?)
    }

    pub fn best_gap(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.exact_gap)
            .reduce(f64::min)
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.records.last()?.exact_gap
    }
}

pub fn run_iro(spec: &MdpSpec, reward: &Reward, base: &BasePolicy, cfg: IroConfig) -> Result<IroRun> {
    let mut runner = IroRunner::new(spec, reward, base, cfg)?;
    runner.run_to_end()?;
    let (optimal_return, base_return, c_st) = match runner.oracle() {
        Some(o) => (Some(o.optimal_return), Some(o.base_return), o.c_st),
        None => (None, None, None),
    };
    Ok(IroRun {
        records: runner.records.clone(),
        stack: runner.stack.clone(),
        optimal_return,
        base_return,
        c_st,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RewardSpec;
    use crate::policy::{exact_npg_step, ExplicitPolicy};

    fn ctx() -> ScheduleContext {
        ScheduleContext {
            c_st: Some(8.0),
            r_max: 1.0,
            iterations: 4,
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(schedule_beta(&BetaSchedule::Constant { beta: 0.7 }, 5, &ctx()).unwrap(), 0.7);
        let s = BetaSchedule::TheoremSqrt { omega: Some(2.0) };
        assert_eq!(schedule_beta(&s, 0, &ctx()).unwrap(), 0.5);
        assert_eq!(schedule_beta(&s, 3, &ctx()).unwrap(), 1.0);
        let e = BetaSchedule::Explicit { betas: vec![1.0, 2.0] };
        assert_eq!(schedule_beta(&e, 1, &ctx()).unwrap(), 2.0);
        assert!(matches!(schedule_beta(&e, 2, &ctx()), Err(Error::ScheduleDomain(_))));
        let auto = BetaSchedule::TheoremSqrt { omega: None };
        let c1 = ScheduleContext {
            c_st: Some(1.0),
            ..ctx()
        };
        assert!(matches!(schedule_beta(&auto, 0, &c1), Err(Error::ScheduleDomain(_))));
        let t1 = ScheduleContext {
            iterations: 1,
            ..ctx()
        };
        assert!(matches!(schedule_beta(&auto, 0, &t1), Err(Error::ScheduleDomain(_))));
        let w = auto_omega(8.0, 1.0, 4).unwrap();
        assert!((w - (2.0 * 8f64.ln() / 4f64.ln()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_iteration() {
        let spec = MdpSpec::new(3, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 1, scale: 1.0 }, &spec).unwrap();
        let cfg = IroConfig::new(1, 50, SearchConfig::new(2, 2, 1), BetaSchedule::Constant { beta: 1.0 });
        let run = run_iro(&spec, &reward, &BasePolicy::Uniform, cfg).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.stack.len(), 1);
        let r = &run.records[0];
        assert_eq!(r.ledger.tokens_generated, 150);
        assert_eq!(r.ledger.reward_queries, 50);
        assert!(r.exact_gap.is_some());
    }

    #[test]
    fn invalid_configs() {
        let spec = MdpSpec::new(3, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 1, scale: 1.0 }, &spec).unwrap();
        let bad = IroConfig::new(2, 10, SearchConfig::new(2, 2, 1), BetaSchedule::Constant { beta: -1.0 });
        let e = IroRunner::new(&spec, &reward, &BasePolicy::Uniform, bad).err().unwrap();
        assert!(e.to_string().contains("beta"));
        let short = IroConfig::new(3, 10, SearchConfig::new(2, 2, 1), BetaSchedule::Explicit { betas: vec![1.0] });
        assert!(IroRunner::new(&spec, &reward, &BasePolicy::Uniform, short).is_err());
    }

    #[test]
    fn expected_mode_matches_npg_trajectory() {
        let spec = MdpSpec::new(3, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 12, scale: 1.0 }, &spec).unwrap();
        let base = BasePolicy::SeededLogits { seed: 4, temperature: 1.0 };
        let mut cfg = IroConfig::new(6, 1, SearchConfig::new(1, 1, 1), BetaSchedule::Constant { beta: 0.5 });
        cfg.fit_mode = FitMode::Expected;
        let run = run_iro(&spec, &reward, &base, cfg).unwrap();

        let model = ExactModel::new(&spec, &reward).unwrap();
        let mut pi: ExplicitPolicy = model.tabulate(&base).unwrap().to_explicit(model.tree());
        let j_star = model.optimal_return();
        for rec in &run.records {
            pi = exact_npg_step(&spec, &reward, &pi, 0.5).unwrap();
            let j = model.exact_return(&model.tabulate(&pi).unwrap());
            assert!((rec.exact_gap.unwrap() - (j_star - j)).abs() < 1e-10);
        }
    }

    #[test]
    fn stack_order_and_betas() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 3, scale: 1.0 }, &spec).unwrap();
        let cfg = IroConfig::new(3, 40, SearchConfig::new(1, 2, 1), BetaSchedule::TheoremSqrt { omega: Some(2.0) });
        let run = run_iro(&spec, &reward, &BasePolicy::Uniform, cfg).unwrap();
        assert_eq!(run.stack.betas(), vec![0.5, 2f64.sqrt() / 2.0, 3f64.sqrt() / 2.0]);
        for (i, r) in run.records.iter().enumerate() {
            assert_eq!(r.t, i + 1);
            assert_eq!(r.stack_size, i + 1);
        }
    }

    #[test]
    fn checkpoint_resume_reproduces() {
        let spec = MdpSpec::new(3, 3).unwrap().with_prompt_count(3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 5, scale: 1.0 }, &spec).unwrap();
        let mut cfg = IroConfig::new(4, 60, SearchConfig::new(2, 2, 1), BetaSchedule::Constant { beta: 0.5 }).with_seed(9);
        cfg.prompt_subset_size = Some(2);
        cfg.n_eval = 20;
        let full = run_iro(&spec, &reward, &BasePolicy::Uniform, cfg.clone()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut r = IroRunner::new(&spec, &reward, &BasePolicy::Uniform, cfg).unwrap();
        r.step().unwrap();
        r.step().unwrap();
        r.save_checkpoint(&path).unwrap();
        drop(r);
        let ck = IroRunner::load_checkpoint(&path).unwrap();
        let mut r = IroRunner::resume(&spec, &reward, &BasePolicy::Uniform, ck).unwrap();
        r.run_to_end().unwrap();
        assert_eq!(r.records(), &full.records[..]);
    }

    #[test]
    fn deterministic_run_any_workers() {
        let spec = MdpSpec::new(3, 4).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 5, scale: 1.0 }, &spec).unwrap();
        let cfg = IroConfig::new(3, 300, SearchConfig::new(2, 2, 2), BetaSchedule::Constant { beta: 0.5 }).with_seed(3);
        let a = run_iro(&spec, &reward, &BasePolicy::Uniform, cfg.clone()).unwrap();
        let b = exec::with_workers(1, || run_iro(&spec, &reward, &BasePolicy::Uniform, cfg).unwrap());
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn mc_eval_deterministic_instance() {
        let spec = MdpSpec::new(2, 3).unwrap();
        let reward = Reward::new(&RewardSpec::HashLeaf { seed: 5, scale: 1.0 }, &spec).unwrap();
        let mut table = ExplicitPolicy::new();
        let model = ExactModel::new(&spec, &reward).unwrap();
        for n in 0..model.tree().interior_len() {
            table.insert(model.tree().prefix(n), vec![1.0, 0.0]);
        }
        let base = BasePolicy::ExplicitTable { table };
        let (m, s) = evaluate_policy_mc(
            &spec,
            &reward,
            &base,
            &GuidanceStack::new(),
            &SearchConfig::new(1, 1, 1),
            GenerationMode::GuidedSearch,
            100,
            &RngStream::new(0),
        )
        .unwrap();
        assert_eq!(m, reward.score_tokens(0, &[crate::mdp::TokenId(0); 3]));
        assert_eq!(s, 0.0);
    }
}
