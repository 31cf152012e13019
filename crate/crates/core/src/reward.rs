//! Gated verifiable reward: correctness, a format bonus, and a tool bonus
//! that only counts when the answer is correct.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::Trajectory;
use crate::scene::{judge, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub format_bonus: f64,
    pub tool_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            format_bonus: 0.5,
            tool_bonus: 0.5,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.format_bonus >= 0.0 && self.tool_bonus >= 0.0) {
            return Err(Error::Config(format!("reward bonuses must be non-negative, got {self:?}")));
        }
        Ok(())
    }

    pub fn max_total(&self) -> f64 {
        1.0 + self.format_bonus + self.tool_bonus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub s_ok: u8,
    pub s_fmt: f64,
    /// Tool term before gating.
    pub s_tool: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(s_ok: u8, s_fmt: f64, s_tool: f64) -> Self {
        let gate = if s_ok == 1 { 1.0 } else { 0.0 };
        RewardBreakdown {
            s_ok,
            s_fmt,
            s_tool,
            total: f64::from(s_ok) + s_fmt + gate * s_tool,
        }
    }
}

pub fn score(traj: &Trajectory, scene: &Scene, config: &RewardConfig) -> RewardBreakdown {
    let s_ok = traj.parsed_answer.as_deref().map_or(0, |a| judge(scene, a));
    let s_fmt = if traj.format_ok { config.format_bonus } else { 0.0 };
    let s_tool = if traj.successful_zooms > 0 { config.tool_bonus } else { 0.0 };
    RewardBreakdown::new(s_ok, s_fmt, s_tool)
}
