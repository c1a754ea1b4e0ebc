use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageConfig;
use crate::envs::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::objective::OptimizerConfig;
use crate::rollout::{SessionConfig, DEFAULT_CRITIQUE_BUDGET};

/// Training recipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Solver and critic with calibrated critique-guided revisions.
    Icrl,
    /// Single-attempt clipped group-relative baseline (`K` forced to 1).
    Grpo,
    /// Solver and critic rewards normalized as one pooled group.
    NoRoleAdv,
    /// Critique-guided revisions trained without calibration weights.
    NoReweight,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Icrl, Variant::Grpo, Variant::NoRoleAdv, Variant::NoReweight];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Icrl => "icrl",
            Variant::Grpo => "grpo",
            Variant::NoRoleAdv => "no_role_adv",
            Variant::NoReweight => "no_reweight",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_size: 256,
            eval_size: 64,
        }
    }
}

/// Parameter initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Trailing tokens featurized, `m`.
    pub context_order: usize,
    /// Standard deviation of the Gaussian initial weights.
    pub scale: f64,
    /// Strength of the built-in tendency to act on a hinted action token.
    pub hint_prior: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            context_order: 4,
            scale: 0.1,
            hint_prior: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub variant: Variant,
    /// Run seed; drives initialization, query batches, and rollouts.
    pub seed: u64,
    pub data: DataConfig,
    /// Sessions per query, `G`.
    pub group_size: usize,
    /// Maximum attempts per session, `K`.
    pub max_rounds: usize,
    /// Sampling temperature for training rollouts.
    pub temperature: f64,
    pub critique_budget: usize,
    /// Queries per optimizer step.
    pub batch_queries: usize,
    pub steps: usize,
    /// Evaluate every this many steps (0 disables periodic evaluation).
    pub eval_every: usize,
    /// Near-greedy evaluation temperature.
    pub eval_temperature: f64,
    pub eval_rounds: usize,
    pub advantage: AdvantageConfig,
    pub optimizer: OptimizerConfig,
    pub init: InitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::KeyDoor.default_config(),
            variant: Variant::Icrl,
            seed: 0,
            data: DataConfig::default(),
            group_size: 8,
            max_rounds: 2,
            temperature: 1.0,
            critique_budget: DEFAULT_CRITIQUE_BUDGET,
            batch_queries: 8,
            steps: 600,
            eval_every: 25,
            eval_temperature: 0.3,
            eval_rounds: 3,
            advantage: AdvantageConfig::default(),
            optimizer: OptimizerConfig::default(),
            init: InitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        Self {
            env: kind.default_config(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if self.batch_queries == 0 {
            return bad("batch_queries must be at least 1".into());
        }
        if self.data.train_size == 0 {
            return bad("train_size must be at least 1".into());
        }
        if self.eval_rounds == 0 {
            return bad("eval_rounds must be at least 1".into());
        }
        if !(self.eval_temperature > 0.0 && self.eval_temperature.is_finite()) {
            return bad(format!("eval_temperature must be positive, got {}", self.eval_temperature));
        }
        if self.init.context_order == 0 {
            return bad("context_order must be at least 1".into());
        }
        if !(self.init.scale >= 0.0 && self.init.hint_prior.is_finite()) {
            return bad("init scale must be non-negative and hint prior finite".into());
        }
        self.session().validate()?;
        self.advantage.validate()?;
        self.optimizer.validate()
    }

    /// Rollout settings, with `K = 1` for the single-attempt baseline.
    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            max_rounds: if self.variant == Variant::Grpo { 1 } else { self.max_rounds },
            temperature: self.temperature,
            critique_budget: self.critique_budget,
        }
    }

    pub fn eval_session(&self) -> SessionConfig {
        SessionConfig {
            max_rounds: self.eval_rounds,
            temperature: self.eval_temperature,
            critique_budget: self.critique_budget,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
