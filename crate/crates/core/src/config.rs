//! Run configuration: one TOML file describing the environment, reward
//! variant, sampler, optimizer, and stage schedule for a training run.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::curriculum::{EarlyStopRule, StageConfig, StageKind};
use crate::error::{Error, Result};
use crate::optim::{AdvantageMode, ClipBounds};
use crate::sampler::MixtureConfig;
use crate::sim::{DifficultyProfile, SimConfig};

/// Which reward-shaping variant a run trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Mastery-gated per-sample soft penalty (the default method).
    Ours,
    /// One global soft band for every sample, entered with a mild start
    /// point (0.8 length quantile at compression entry).
    GlobalSoftLite,
    /// One global soft band with an aggressive start point (0.6 quantile).
    GlobalSoftHeavy,
    /// Per-sample gating, but over-length rollouts of gated samples are cut
    /// at the start threshold and scored incorrect instead of soft-penalized.
    HardTruncation,
}

impl BaselineKind {
    /// Quantile of the current length distribution used as the shared soft
    /// band's start when compression begins (global variants only).
    pub fn start_quantile(self) -> Option<f64> {
        match self {
            BaselineKind::GlobalSoftLite => Some(0.8),
            BaselineKind::GlobalSoftHeavy => Some(0.6),
            BaselineKind::Ours | BaselineKind::HardTruncation => None,
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineKind::Ours => "ours",
            BaselineKind::GlobalSoftLite => "global_soft_lite",
            BaselineKind::GlobalSoftHeavy => "global_soft_heavy",
            BaselineKind::HardTruncation => "hard_truncation",
        })
    }
}

/// Early-stop switch plus its rule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    #[serde(flatten)]
    pub rule: EarlyStopRule,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig { enabled: true, rule: EarlyStopRule::default() }
    }
}

/// Everything a run needs, loadable from TOML. Every field has a default,
/// so a config file only lists what it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub baseline: BaselineKind,
    pub advantage_mode: AdvantageMode,
    /// Learning rate for both per-sample and shared parameter blocks.
    pub lr: f64,
    /// Surrogate-objective passes per batch. Only 1 is supported: with a
    /// single pass the importance ratio is exactly 1 and the update reduces
    /// to advantage-weighted score ascent.
    pub inner_epochs: u32,
    /// Fraction of the population held out from training batches and used
    /// only for evaluation. Rounded to a 1-in-k split.
    pub holdout_fraction: f64,
    /// Override for the global variants' start quantile (defaults to the
    /// per-variant value from [`BaselineKind::start_quantile`]).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_start_quantile: Option<f64>,
    pub profile: DifficultyProfile,
    pub sim: SimConfig,
    pub mixture: MixtureConfig,
    pub clip: ClipBounds,
    pub stages: Vec<StageConfig>,
    pub early_stop: EarlyStopConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            baseline: BaselineKind::Ours,
            advantage_mode: AdvantageMode::Grpo,
            lr: 0.01,
            inner_epochs: 1,
            holdout_fraction: 0.25,
            global_start_quantile: None,
            profile: DifficultyProfile::MasteredHeavy,
            sim: SimConfig::default(),
            mixture: MixtureConfig::default(),
            clip: ClipBounds::default(),
            stages: vec![
                StageConfig { kind: StageKind::Accuracy, max_steps: 60, eval_every: 5 },
                StageConfig { kind: StageKind::Compression, max_steps: 60, eval_every: 2 },
                StageConfig { kind: StageKind::Accuracy, max_steps: 80, eval_every: 5 },
            ],
            early_stop: EarlyStopConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.mixture.validate()?;
        ClipBounds::new(self.clip.low, self.clip.high)?;
        self.early_stop.rule.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.inner_epochs != 1 {
            return Err(Error::InvalidConfig(format!(
                "inner_epochs: only 1 is supported, got {}",
                self.inner_epochs
            )));
        }
        if !(0.0..=0.5).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig(format!(
                "holdout_fraction must be in [0, 0.5], got {}",
                self.holdout_fraction
            )));
        }
        if let Some(q) = self.global_start_quantile {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "global_start_quantile must be in (0, 1), got {q}"
                )));
            }
        }
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("stages must not be empty".into()));
        }
        for stage in &self.stages {
            stage.validate()?;
        }
        if self.stages.iter().all(|s| s.max_steps == 0) {
            return Err(Error::InvalidConfig("every stage has max_steps = 0".into()));
        }
        if self.mixture.batch_size > self.sim.population_size * self.sim.rollouts_per_sample {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} exceeds population capacity {}",
                self.mixture.batch_size,
                self.sim.population_size * self.sim.rollouts_per_sample
            )));
        }
        Ok(())
    }

    /// The effective start quantile for global soft variants.
    pub fn effective_start_quantile(&self) -> Option<f64> {
        self.global_start_quantile.or_else(|| self.baseline.start_quantile())
    }

    /// Every k-th population index is held out; returns `None` when the
    /// holdout fraction is zero.
    pub fn holdout_stride(&self) -> Option<usize> {
        if self.holdout_fraction == 0.0 {
            None
        } else {
            Some((1.0 / self.holdout_fraction).round().max(2.0) as usize)
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.into(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.to_string_lossy())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON form; stable across reloads of the
    /// same logical config.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hasher.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }
}
