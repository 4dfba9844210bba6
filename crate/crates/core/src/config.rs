//! Run configuration with desk-scale defaults.
//!
//! Every field has a default, so an empty document is a valid configuration.
//! [`RunConfig::paper_scale`] gives the published hyperparameters.

use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::es::FitnessShaping;
use crate::replay::{MultiBufferConfig, SampleRatio, ThresholdMode, DEFAULT_CAPACITY};
use crate::td3::Td3Hypers;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsConfig {
    /// Noise directions per generation; each is evaluated mirrored, so a
    /// generation costs `2 * offspring` rollouts.
    pub offspring: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    pub shaping: FitnessShaping,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            offspring: 10,
            sigma: 0.005,
            learning_rate: 0.001,
            shaping: FitnessShaping::CenteredRank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferConfig {
    pub good_capacity: usize,
    pub bad_capacity: usize,
    pub noisy_capacity: usize,
    pub ratio: SampleRatio,
    pub good_fraction: f64,
    pub threshold_mode: ThresholdMode,
    /// Route ES trajectories into the noisy compartment too (one merged buffer).
    pub merged: bool,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            good_capacity: DEFAULT_CAPACITY,
            bad_capacity: DEFAULT_CAPACITY,
            noisy_capacity: DEFAULT_CAPACITY,
            ratio: SampleRatio::PAPER,
            good_fraction: 0.9,
            threshold_mode: ThresholdMode::Literal,
            merged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvKind,
    pub iterations: usize,
    /// TD3 environment steps per iteration (M).
    pub td3_frames_per_iter: usize,
    /// ES generations per iteration (g).
    pub es_generations_per_iter: usize,
    /// Minimum stored transitions before TD3 updates start (K).
    pub warmup: usize,
    pub overwrite: bool,
    pub overwrite_eval_episodes: usize,
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
    pub es: EsConfig,
    pub td3: Td3Hypers,
    pub buffer: BufferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::PointMass2D,
            iterations: 10,
            td3_frames_per_iter: 5000,
            es_generations_per_iter: 10,
            warmup: 1000,
            overwrite: true,
            overwrite_eval_episodes: 5,
            hidden_sizes: vec![32, 32],
            seed: 0,
            es: EsConfig::default(),
            td3: Td3Hypers::default(),
            buffer: BufferConfig::default(),
        }
    }
}

impl RunConfig {
    /// Published hyperparameters: 20 iterations of 100k TD3 frames and 50 ES
    /// generations of 60 mirrored pairs, 256x256 networks, K = 25000.
    pub fn paper_scale(env: EnvKind) -> Self {
        Self {
            env,
            iterations: 20,
            td3_frames_per_iter: 100_000,
            es_generations_per_iter: 50,
            warmup: 25_000,
            hidden_sizes: vec![256, 256],
            es: EsConfig {
                offspring: 60,
                ..EsConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be positive"))
            } else {
                Ok(())
            }
        };
        let positive_real = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be a positive number, got {v}")))
            }
        };
        positive("overwrite_eval_episodes", self.overwrite_eval_episodes)?;
        positive("es.offspring", self.es.offspring)?;
        positive_real("sigma", self.es.sigma)?;
        positive_real("es.learning_rate", self.es.learning_rate)?;
        if let Some(i) = self.hidden_sizes.iter().position(|&h| h == 0) {
            return Err(Error::config(format!("hidden_sizes[{i}]"), "must be positive"));
        }
        self.td3.validate()?;
        positive("buffer.good_capacity", self.buffer.good_capacity)?;
        positive("buffer.bad_capacity", self.buffer.bad_capacity)?;
        positive("buffer.noisy_capacity", self.buffer.noisy_capacity)?;
        self.buffer
            .ratio
            .validate()
            .map_err(|e| match e {
                Error::Config { key, reason } => Error::config(format!("buffer.{key}"), reason),
                other => other,
            })?;
        let f = self.buffer.good_fraction;
        if !(f.is_finite() && (0.0..=1.0).contains(&f)) {
            return Err(Error::config(
                "buffer.good_fraction",
                format!("must lie in [0, 1], got {f}"),
            ));
        }
        Ok(())
    }

    pub fn multibuffer(&self) -> MultiBufferConfig {
        MultiBufferConfig {
            good_capacity: self.buffer.good_capacity,
            bad_capacity: self.buffer.bad_capacity,
            noisy_capacity: self.buffer.noisy_capacity,
            ratio: self.buffer.ratio,
            min_total: self.warmup,
            merged: self.buffer.merged,
        }
    }

    /// Rollouts spent by ES per iteration.
    pub fn es_evals_per_iter(&self) -> usize {
        self.es_generations_per_iter * 2 * self.es.offspring
    }

    pub fn with_ablation(mut self, mode: Ablation) -> Self {
        mode.apply(&mut self);
        self
    }
}

/// Degenerate configurations that isolate one half of the hybrid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// No ES generations; batches come only from TD3's own transitions.
    Td3Only,
    /// No TD3 frames and no overwrite.
    EsOnly,
    /// ES trajectories join TD3's in a single compartment.
    SingleBuffer,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::Td3Only,
        Ablation::EsOnly,
        Ablation::SingleBuffer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::Td3Only => "td3_only",
            Ablation::EsOnly => "es_only",
            Ablation::SingleBuffer => "single_buffer",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Ablation::Full => {}
            Ablation::Td3Only => {
                cfg.es_generations_per_iter = 0;
                cfg.buffer.ratio = SampleRatio::NOISY_ONLY;
            }
            Ablation::EsOnly => {
                cfg.td3_frames_per_iter = 0;
                cfg.overwrite = false;
            }
            Ablation::SingleBuffer => {
                cfg.buffer.merged = true;
                cfg.buffer.ratio = SampleRatio::NOISY_ONLY;
            }
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown ablation `{s}`")))
    }
}
