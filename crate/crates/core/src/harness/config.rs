use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envsuite::{ExpertConfig, SuiteConfig};
use crate::error::{Error, Result};
use crate::policy::PolicyConfig;
use crate::rloo_ppo::RiptConfig;
use crate::rng;
use crate::supervised::SupervisedConfig;

/// Where demonstrations and contexts come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Stage 1 demonstrations per task; 0 skips pretraining.
    pub pretrain_per_task: usize,
    pub pretrain_scenario: usize,
    /// Tasks used for pretraining; empty means every task.
    pub pretrain_tasks: Vec<usize>,
    /// Size of the per-task pool that SFT shots are drawn from.
    pub sft_pool_per_task: usize,
    /// SFT demonstrations per task; `None` uses the whole pool.
    pub sft_shots: Option<usize>,
    /// Scenario used for SFT, post-training contexts and evaluation.
    pub target_scenario: usize,
    /// Tasks used from SFT onwards; empty means every task.
    pub target_tasks: Vec<usize>,
    /// Extra action-free initial states added to the context set, per task.
    pub extra_contexts_per_task: usize,
    pub expert: ExpertConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            pretrain_per_task: 0,
            pretrain_scenario: 0,
            pretrain_tasks: Vec::new(),
            sft_pool_per_task: 50,
            sft_shots: None,
            target_scenario: 0,
            target_tasks: Vec::new(),
            extra_contexts_per_task: 0,
            expert: ExpertConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleFitConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for ScaleFitConfig {
    fn default() -> Self {
        ScaleFitConfig { steps: 500, lr: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out test contexts per task.
    pub contexts_per_task: usize,
    pub episodes_per_context: usize,
    /// Evaluate during post-training every this many steps; 0 disables.
    pub interval: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            contexts_per_task: 50,
            episodes_per_context: 1,
            interval: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Context-set sizes per task for the context-size ablation.
    pub context_sizes: Vec<usize>,
    /// Noise multipliers for the initial-state noise ablation.
    pub noise_scales: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            context_sizes: vec![1, 5, 25],
            noise_scales: vec![0.0, 1.0, 2.0, 4.0],
        }
    }
}

/// Everything one experiment needs. Loaded from TOML; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub suite: SuiteConfig,
    /// Load the suite definition from this file instead of `suite`.
    pub suite_file: Option<PathBuf>,
    pub policy: PolicyConfig,
    pub data: DataConfig,
    pub pretrain: SupervisedConfig,
    pub sft: SupervisedConfig,
    /// Fit a scale head after SFT (regression policies only).
    pub scale_fit: Option<ScaleFitConfig>,
    pub ript: RiptConfig,
    pub eval: EvalConfig,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub ablation: AblationConfig,
    /// Save a policy checkpoint every this many post-training steps; 0 disables.
    pub checkpoint_interval: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            suite: SuiteConfig::default(),
            suite_file: None,
            policy: PolicyConfig::default(),
            data: DataConfig::default(),
            pretrain: SupervisedConfig::default(),
            sft: SupervisedConfig::default(),
            scale_fit: None,
            ript: RiptConfig::default(),
            eval: EvalConfig::default(),
            shots: vec![1, 5, 10],
            seeds: vec![0, 1, 2],
            ablation: AblationConfig::default(),
            checkpoint_interval: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.eval.episodes_per_context == 0 || self.eval.contexts_per_task == 0 {
            return Err(Error::Config("evaluation needs at least one context and one episode".into()));
        }
        if self.data.sft_pool_per_task == 0 {
            return Err(Error::Config("sft_pool_per_task must be at least 1".into()));
        }
        if let Some(s) = self.data.sft_shots {
            if s == 0 || s > self.data.sft_pool_per_task {
                return Err(Error::Config(format!(
                    "sft_shots = {s} must lie in 1..={}",
                    self.data.sft_pool_per_task
                )));
            }
        }
        if let Some(&s) = self.shots.iter().find(|&&s| s == 0 || s > self.data.sft_pool_per_task) {
            return Err(Error::Config(format!(
                "shot count {s} outside 1..={}",
                self.data.sft_pool_per_task
            )));
        }
        if self.ablation.noise_scales.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise scales must be >= 0".into()));
        }
        if self.suite_file.is_none() {
            self.suite.validate()?;
        }
        self.ript.validate()
    }

    /// Copy with every training seed derived from `seed`. The suite seed is
    /// left alone: seeds vary training, not the environments.
    pub fn for_seed(&self, seed: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.policy.seed = rng::derive(seed, &[0x706f6c]);
        c.pretrain.seed = rng::derive(seed, &[0x707265]);
        c.sft.seed = rng::derive(seed, &[0x736674]);
        c.ript.seed = rng::derive(seed, &[0x72697074]);
        c.data.expert.seed = rng::derive(seed, &[0x657870]);
        c
    }

    /// Seed used to pick few-shot subsets.
    pub fn shots_seed(seed: u64) -> u64 {
        rng::derive(seed, &[0x73686f74])
    }
}
