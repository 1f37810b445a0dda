//! Experiment config files (TOML). Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use iro_core::iro::{BetaSchedule, FitMode, GenerationMode, IroConfig};
use iro_core::search::SearchConfig;
use iro_core::{BasePolicy, MdpSpec, Reward, RewardSpec, ValueReprChoice};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const OUTPUT_ROOT_ENV: &str = "IRO_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Run directory. Defaults to `$IRO_OUTPUT_ROOT/<config stem>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub mdp: MdpSpec,
    pub reward: RewardSpec,
    #[serde(default = "uniform")]
    pub base: BasePolicy,
    pub iro: IroSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn uniform() -> BasePolicy {
    BasePolicy::Uniform
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IroSection {
    pub iterations: usize,
    pub samples_per_iteration: usize,
    pub search: SearchConfig,
    pub schedule: BetaSchedule,
    #[serde(default)]
    pub value_repr: ValueReprChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_subset_size: Option<usize>,
    #[serde(default)]
    pub generation: GenerationMode,
    #[serde(default)]
    pub fit_mode: FitMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Monte Carlo evaluation rollouts per iteration (and BoN runs).
    #[serde(default)]
    pub n_eval: usize,
    /// Exact returns and gaps from the oracle.
    #[serde(default = "yes")]
    pub oracle: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_eval: 0, oracle: true }
    }
}

fn yes() -> bool {
    true
}

/// A parsed, validated config plus the objects built from it.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub reward: Reward,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn iro_config(&self) -> IroConfig {
        let s = &self.iro;
        IroConfig {
            iterations: s.iterations,
            samples_per_iteration: s.samples_per_iteration,
            search: s.search.clone(),
            value_repr: s.value_repr.clone(),
            schedule: s.schedule.clone(),
            prompt_subset_size: s.prompt_subset_size,
            master_seed: self.master_seed,
            generation: s.generation,
            fit_mode: s.fit_mode,
            n_eval: self.eval.n_eval,
            exact_eval: self.eval.oracle,
        }
    }

    pub fn parse(text: &str) -> Result<Self, UsageError> {
        toml::from_str(text).map_err(|e| UsageError(format!("config: {}", e.message().trim())))
    }

    pub fn validate(&self) -> Result<Reward, UsageError> {
        let bad = |what: &str, e: iro_core::Error| UsageError(format!("config {what}: {e}"));
        self.mdp.validate().map_err(|e| bad("mdp", e))?;
        self.base.validate().map_err(|e| bad("base", e))?;
        let reward = Reward::new(&self.reward, &self.mdp).map_err(|e| bad("reward", e))?;
        self.iro_config().validate(&self.mdp).map_err(|e| bad("iro", e))?;
        Ok(reward)
    }

    /// Every optional field written out explicitly.
    pub fn resolved(&self, output_dir: &Path) -> Self {
        let mut c = self.clone();
        c.output_dir = Some(output_dir.to_path_buf());
        c
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn load(path: &Path) -> Result<Loaded, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let config = ExperimentConfig::parse(&text)?;
    let reward = config.validate()?;
    let output_dir = match &config.output_dir {
        Some(d) => d.clone(),
        None => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            output_root().join(stem)
        }
    };
    Ok(Loaded {
        config: config.resolved(&output_dir),
        reward,
        output_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
master_seed = 3

[mdp]
vocab_size = 2
horizon = 3

[reward]
family = "hash_leaf"
seed = 1
scale = 1.0

[iro]
iterations = 1
samples_per_iteration = 50
search = { beam_width = 2, successors = 2, chunk_length = 1 }
schedule = { kind = "constant", beta = 0.5 }
"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.base, BasePolicy::Uniform);
        assert_eq!(c.eval, EvalSection::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ExperimentConfig::parse(&MINIMAL.replace("master_seed = 3", "master_seed = 3\nmaster_sed = 4")).unwrap_err();
        assert!(e.0.contains("master_sed"), "{e}");
        let e = ExperimentConfig::parse(&MINIMAL.replace("horizon = 3", "horizon = 3\nhorizn = 3")).unwrap_err();
        assert!(e.0.contains("horizn"), "{e}");
    }

    #[test]
    fn negative_beta_names_beta() {
        let c = ExperimentConfig::parse(&MINIMAL.replace("beta = 0.5", "beta = -0.5")).unwrap();
        let e = c.validate().unwrap_err();
        assert!(e.0.contains("beta"), "{e}");
    }

    #[test]
    fn resolved_round_trips_through_json() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap().resolved(Path::new("out/x"));
        let v = serde_json::to_value(&c).unwrap();
        assert!(v["iro"]["value_repr"].is_object());
        let back: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }
}
