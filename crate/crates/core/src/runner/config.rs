//! Experiment configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::ForgeConfig;
use crate::policy::PolicyDims;
use crate::rollout::RolloutLimits;
use crate::scene::SceneSpec;
use crate::train::{StageDescriptor, StageKind, TrainConfig};

/// First episode index of the held-out range; training pools live below it.
pub const HELDOUT_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub embed: usize,
    pub hidden: usize,
    pub window: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embed: 16,
            hidden: 64,
            window: 16,
        }
    }
}

impl PolicyConfig {
    pub fn dims(&self, vocab: usize) -> PolicyDims {
        PolicyDims {
            vocab,
            embed: self.embed,
            hidden: self.hidden,
            window: self.window,
        }
    }
}

/// Training scene pools, as counts of consecutive episode indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    /// Hard scenes optimized by RL (and reused by pre-warming SFT):
    /// indices `0..rl_scenes`.
    pub rl_scenes: u64,
    /// Scenes for VQA cold start without pre-warming: the next
    /// `separate_vqa_scenes` indices.
    pub separate_vqa_scenes: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            rl_scenes: 256,
            separate_vqa_scenes: 256,
        }
    }
}

impl PoolConfig {
    pub fn rl_pool(&self) -> Vec<u64> {
        (0..self.rl_scenes).collect()
    }

    pub fn separate_pool(&self) -> Vec<u64> {
        (self.rl_scenes..self.rl_scenes + self.separate_vqa_scenes).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n: usize,
    pub ks: Vec<usize>,
    pub heldout_scenes: u64,
    /// Also report greedy (temperature 0) pass@1.
    pub greedy: bool,
    pub limits: RolloutLimits,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n: 8,
            ks: vec![1, 2, 4, 8],
            heldout_scenes: 128,
            greedy: true,
            limits: RolloutLimits::default(),
        }
    }
}

impl EvalConfig {
    pub fn heldout(&self) -> Vec<u64> {
        (HELDOUT_BASE..HELDOUT_BASE + self.heldout_scenes).collect()
    }

    pub fn k_max(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqaSource {
    None,
    /// Demonstrations on a pool disjoint from the RL scenes.
    Separate,
    /// Demonstrations on the RL scenes themselves.
    Prewarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    /// Include the forged text QA corpus in supervised stages.
    pub text: bool,
    /// Overrides `forge.corpus_size` for this arm.
    pub text_corpus_size: Option<usize>,
    /// Overrides `forge.cot_enabled` for this arm.
    pub text_cot: Option<bool>,
    pub vqa: VqaSource,
    /// Reasoning tokens in rule-question demonstrations.
    pub vqa_cot: bool,
    pub text_weight: f64,
    pub vqa_weight: f64,
    /// Allow zoom actions during evaluation.
    pub eval_tools: bool,
    pub stages: Vec<StageDescriptor>,
}

impl Default for ArmConfig {
    fn default() -> Self {
        ArmConfig {
            name: "arm".into(),
            text: false,
            text_corpus_size: None,
            text_cot: None,
            vqa: VqaSource::None,
            vqa_cot: true,
            text_weight: 1.0,
            vqa_weight: 1.0,
            eval_tools: true,
            stages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Run arms concurrently, each in its own output directory.
    pub parallel_arms: bool,
    pub scene: SceneSpec,
    pub forge: ForgeConfig,
    pub policy: PolicyConfig,
    pub pools: PoolConfig,
    pub eval: EvalConfig,
    pub arms: Vec<ArmConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sft = StageDescriptor {
            name: "sft".into(),
            train: TrainConfig::sft_default(),
            ..StageDescriptor::default()
        };
        let rl = StageDescriptor {
            train: TrainConfig {
                steps: 100,
                ..TrainConfig::default()
            },
            ..StageDescriptor::default()
        };
        ExperimentConfig {
            seed: 0,
            parallel_arms: false,
            scene: SceneSpec::default(),
            forge: ForgeConfig::default(),
            policy: PolicyConfig::default(),
            pools: PoolConfig::default(),
            eval: EvalConfig::default(),
            arms: canonical_arms(&sft, &rl),
        }
    }
}

/// The six reference arms: untrained, RL without tools, RL with tools, and
/// three cold-start variants followed by RL with tools.
pub fn canonical_arms(sft: &StageDescriptor, rl: &StageDescriptor) -> Vec<ArmConfig> {
    let plain = StageDescriptor {
        name: StageKind::RlPlain.name().into(),
        ..rl.clone()
    };
    let agentic = StageDescriptor {
        name: StageKind::RlAgentic.name().into(),
        ..rl.clone()
    };
    let sft = StageDescriptor {
        name: StageKind::Sft.name().into(),
        ..sft.clone()
    };
    vec![
        ArmConfig {
            name: "base".into(),
            ..ArmConfig::default()
        },
        ArmConfig {
            name: "rl_plain".into(),
            eval_tools: false,
            stages: vec![plain],
            ..ArmConfig::default()
        },
        ArmConfig {
            name: "rl_agentic".into(),
            stages: vec![agentic.clone()],
            ..ArmConfig::default()
        },
        ArmConfig {
            name: "sft_vqa+rl_agentic".into(),
            vqa: VqaSource::Separate,
            stages: vec![sft.clone(), agentic.clone()],
            ..ArmConfig::default()
        },
        ArmConfig {
            name: "sft_vqa_prewarm+rl_agentic".into(),
            vqa: VqaSource::Prewarm,
            stages: vec![sft.clone(), agentic.clone()],
            ..ArmConfig::default()
        },
        ArmConfig {
            name: "sft_text_vqa_prewarm+rl_agentic".into(),
            text: true,
            vqa: VqaSource::Prewarm,
            stages: vec![sft, agentic],
            ..ArmConfig::default()
        },
    ]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.forge.validate()?;
        if self.policy.embed == 0 || self.policy.hidden == 0 || self.policy.window == 0 {
            return Err(Error::Config("policy dims must be positive".into()));
        }
        if self.pools.rl_scenes + self.pools.separate_vqa_scenes > HELDOUT_BASE {
            return Err(Error::Config("training pools overlap the held-out range".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) || self.eval.n < self.eval.k_max() {
            return Err(Error::Config(format!(
                "eval.ks {:?} must be positive and not exceed eval.n = {}",
                self.eval.ks, self.eval.n
            )));
        }
        self.eval.limits.validate()?;
        let mut names = std::collections::BTreeSet::new();
        for arm in &self.arms {
            if !names.insert(arm.name.as_str()) {
                return Err(Error::Config(format!("duplicate arm name {:?}", arm.name)));
            }
            if arm.name.is_empty() || arm.name.contains(['/', '\\']) || arm.name.starts_with('.') {
                return Err(Error::Config(format!("arm name {:?} is not a valid directory name", arm.name)));
            }
            for s in &arm.stages {
                s.validate()
                    .map_err(|e| Error::Config(format!("arm {:?}: {e}", arm.name)))?;
            }
            if !(arm.text_weight >= 0.0 && arm.vqa_weight >= 0.0) {
                return Err(Error::Config(format!("arm {:?}: mixture weights must be non-negative", arm.name)));
            }
        }
        Ok(())
    }

    pub fn arm(&self, name: &str) -> Result<&ArmConfig> {
        self.arms
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Config(format!("no arm named {name:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert_eq!(cfg.arms.len(), 6);
    }

    #[test]
    fn unknown_stage_names_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.arms[2].stages[0].name = "dpo".into();
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("dpo")));
    }

    #[test]
    fn heldout_is_disjoint_from_training() {
        let cfg = ExperimentConfig::default();
        let held = cfg.eval.heldout();
        let max_train = cfg.pools.rl_scenes + cfg.pools.separate_vqa_scenes;
        assert!(held.iter().all(|&i| i >= max_train));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("seed = 1\nbogus = 2\n").is_err());
    }
}
