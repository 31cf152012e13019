//! Supervised fine-tuning and GRPO, plus the stage driver used by the runner.

pub mod data;
pub mod grpo;
pub mod sft;
pub mod stage;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{scene_demo, text_example, SftExample, SftSource};
pub use grpo::{grpo_advantages, grpo_objective, grpo_step, token_ratios, GroupBatch, GrpoStats};
pub use sft::{sft_objective, sft_step};
pub use stage::{collect_group, run_stage, run_stage_with, rollout_seed, StageData, StageDescriptor, StageKind, StepMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    MeanBaseline,
    MeanStdNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub clip: f64,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    pub group_size: usize,
    pub advantage_mode: AdvantageMode,
    pub steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            clip: 0.2,
            kl_coefficient: 0.0,
            learning_rate: 1e-3,
            group_size: 8,
            advantage_mode: AdvantageMode::MeanBaseline,
            steps: 0,
        }
    }
}

/// Default learning rate of supervised stages.
pub const SFT_LEARNING_RATE: f64 = 1e-2;

impl TrainConfig {
    pub fn sft_default() -> Self {
        TrainConfig {
            learning_rate: SFT_LEARNING_RATE,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip {} must lie in (0, 1)", self.clip)));
        }
        if !(self.kl_coefficient >= 0.0) {
            return Err(Error::Config(format!("kl_coefficient {} must be non-negative", self.kl_coefficient)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.group_size < 2 {
            return Err(Error::Config(format!("group_size {} must be at least 2", self.group_size)));
        }
        Ok(())
    }
}
