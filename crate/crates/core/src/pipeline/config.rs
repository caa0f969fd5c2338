use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::degrade::{DegradationSpec, Task};
use crate::error::{Error, Result};
use crate::flow::SamplerConfig;
use crate::nn::{AdamWConfig, InitialStageConfig, ModelConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Switches for the ablation study. All `true` is the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// `false` trains at `t = 0` only and samples with a single step.
    pub use_flow: bool,
    /// `false` guides with the raw degraded image instead of `τ(z_LQ)`.
    pub use_initial_stage: bool,
    /// `false` samples with plain Euler over the same `N`.
    pub use_meanvalue: bool,
    pub jump_from_origin: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_flow: true,
            use_initial_stage: true,
            use_meanvalue: true,
            jump_from_origin: false,
        }
    }
}

impl Ablation {
    /// The sampler actually run at inference for these switches.
    pub fn inference_sampler(&self, base: SamplerConfig) -> SamplerConfig {
        if !self.use_flow {
            SamplerConfig::euler(1)
        } else if !self.use_meanvalue {
            SamplerConfig::euler(base.steps)
        } else {
            SamplerConfig {
                jump_from_origin: self.jump_from_origin,
                ..SamplerConfig::mean_value(base.steps, base.midpoint)
            }
        }
    }
}

/// Learning-rate multiplier over the flow training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `½(1 + cos(π·step/total))`, reaching zero at the last step.
    Cosine,
}

impl LrSchedule {
    /// Multiplier for 0-based `step` out of `total`.
    pub fn factor(self, step: usize, total: usize) -> f32 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                (0.5 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
            }
        }
    }
}

/// Where training images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Image folder; the procedural toy corpus is used when absent.
    pub dir: Option<PathBuf>,
    pub toy_images: usize,
    /// Train / val / test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            toy_images: 256,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub task: Task,
    pub resolution: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub optimizer: AdamWConfig,
    pub lr_schedule: LrSchedule,
    /// Decay of an exponential moving average of the flow weights; the
    /// average replaces the raw weights when training ends.
    pub ema_decay: Option<f32>,
    pub degradation: DegradationSpec,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub ablation: Ablation,
    /// `t` is drawn from `[0, 1 − t_epsilon]`.
    pub t_epsilon: f32,
    pub model: ModelConfig,
    pub tau: InitialStageConfig,
    /// Pre-training steps for the initial-stage model.
    pub tau_steps: usize,
    pub tau_optimizer: AdamWConfig,
    pub data: DataConfig,
    /// Seed for degradations and start noise during evaluation.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            task: Task::Restoration,
            resolution: 32,
            batch_size: 4,
            total_steps: 10_000,
            optimizer: AdamWConfig::default(),
            lr_schedule: LrSchedule::Constant,
            ema_decay: None,
            degradation: DegradationSpec::default(),
            sampler: SamplerConfig::default(),
            seed: 0,
            ablation: Ablation::default(),
            t_epsilon: 1e-3,
            model: ModelConfig::toy(),
            tau: InitialStageConfig::default(),
            tau_steps: 5_000,
            tau_optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
            data: DataConfig::default(),
            eval_seed: 1234,
        }
    }
}

impl TrainConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::domain("TrainConfig", d));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not {SCHEMA_VERSION}", self.schema_version));
        }
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return bad(format!("resolution {} must be a positive multiple of 8", self.resolution));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.optimizer.lr > 0.0) || !(self.tau_optimizer.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return bad(format!("ema_decay {d} must lie in [0, 1)"));
            }
        }
        if !(self.t_epsilon > 0.0 && self.t_epsilon < 1.0) {
            return bad(format!("t_epsilon {} must lie in (0, 1)", self.t_epsilon));
        }
        if self.degradation.task != self.task {
            return bad(format!(
                "task {:?} does not match degradation task {:?}",
                self.task, self.degradation.task
            ));
        }
        self.degradation.validate()?;
        self.sampler.validate()?;
        self.model.validate()
    }
}
