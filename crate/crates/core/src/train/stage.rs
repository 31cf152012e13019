//! Stage driver: supervised passes and GRPO loops over scene pools.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::SftExample;
use super::grpo::{grpo_step, GroupBatch};
use super::sft::sft_step;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::policy::{PolicyParams, TokenFilter, Vocabulary};
use crate::reward::{score, RewardBreakdown, RewardConfig};
use crate::rollout::{run_episode, RolloutLimits, Trajectory};
use crate::scene::{Scene, SceneGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Sft,
    /// GRPO with zoom actions masked out of the policy.
    RlPlain,
    /// GRPO with the zoom tool available.
    RlAgentic,
}

impl StageKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sft" => Ok(StageKind::Sft),
            "rl_plain" => Ok(StageKind::RlPlain),
            "rl_agentic" => Ok(StageKind::RlAgentic),
            other => Err(Error::Config(format!(
                "unknown stage {other:?} (expected sft, rl_plain or rl_agentic)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Sft => "sft",
            StageKind::RlPlain => "rl_plain",
            StageKind::RlAgentic => "rl_agentic",
        }
    }
}

/// One stage of an arm.
///
/// Supervised stages run `train.steps` updates when that is non-zero and
/// otherwise `epochs` passes over the mixed pool. RL stages run `train.steps`
/// updates of `scenes_per_step` groups each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageDescriptor {
    pub name: String,
    pub train: TrainConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub scenes_per_step: usize,
    pub limits: RolloutLimits,
    pub reward: RewardConfig,
}

impl Default for StageDescriptor {
    fn default() -> Self {
        StageDescriptor {
            name: "rl_agentic".into(),
            train: TrainConfig::default(),
            batch_size: 32,
            epochs: 1,
            scenes_per_step: 8,
            limits: RolloutLimits::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl StageDescriptor {
    pub fn kind(&self) -> Result<StageKind> {
        StageKind::parse(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        self.train.validate()?;
        if kind == StageKind::Sft && self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if kind != StageKind::Sft {
            if self.scenes_per_step == 0 {
                return Err(Error::Config("scenes_per_step must be positive".into()));
            }
            self.limits.validate()?;
            self.reward.validate()?;
        }
        Ok(())
    }
}

/// Inputs a stage may draw on.
#[derive(Clone, Copy)]
pub struct StageData<'a> {
    pub vocab: &'a Vocabulary,
    pub scenes: &'a SceneGenerator,
    pub text: &'a [SftExample],
    pub vqa: &'a [SftExample],
    pub text_weight: f64,
    pub vqa_weight: f64,
    /// Episode indices used by RL stages.
    pub rl_pool: &'a [u64],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub metrics: BTreeMap<String, f64>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one rollout, derived from its coordinates so that results do not
/// depend on scheduling.
pub fn rollout_seed(seed: u64, step: u64, query: u64, sample: u64) -> u64 {
    [step, query, sample].into_iter().fold(splitmix(seed), |acc, x| splitmix(acc ^ splitmix(x)))
}

/// `group_size` rollouts of one scene with their rewards.
#[allow(clippy::too_many_arguments)]
pub fn collect_group(
    params: &PolicyParams,
    vocab: &Vocabulary,
    scene: &Scene,
    limits: &RolloutLimits,
    reward: &RewardConfig,
    filter: TokenFilter,
    group_size: usize,
    seed: u64,
    step: u64,
) -> Result<(Vec<Trajectory>, Vec<RewardBreakdown>)> {
    let runs: Vec<(Trajectory, RewardBreakdown)> = (0..group_size as u64)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(seed, step, scene.episode_index, g));
            let t = run_episode(params, vocab, scene, limits, filter, &mut rng)?;
            let r = score(&t, scene, reward);
            Ok((t, r))
        })
        .collect::<Result<_>>()?;
    Ok(runs.into_iter().unzip())
}

fn sft_schedule(desc: &StageDescriptor, data: &StageData, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<SftExample>>> {
    let mut sources: Vec<(&[SftExample], f64)> = Vec::new();
    if !data.text.is_empty() && data.text_weight > 0.0 {
        sources.push((data.text, data.text_weight));
    }
    if !data.vqa.is_empty() && data.vqa_weight > 0.0 {
        sources.push((data.vqa, data.vqa_weight));
    }
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    let pool: usize = sources.iter().map(|(s, _)| s.len()).sum();
    let steps = if desc.train.steps > 0 {
        desc.train.steps
    } else {
        (desc.epochs * pool).div_ceil(desc.batch_size)
    };
    let slots = if desc.train.steps > 0 {
        steps * desc.batch_size
    } else {
        desc.epochs * pool
    };
    let weights = rand::distributions::WeightedIndex::new(sources.iter().map(|(_, w)| *w))
        .map_err(|e| Error::Config(format!("mixture weights: {e}")))?;
    let mut orders: Vec<Vec<usize>> = sources.iter().map(|_| Vec::new()).collect();
    let mut picked = Vec::with_capacity(slots);
    for _ in 0..slots {
        let s = if sources.len() == 1 { 0 } else { weights.sample(rng) };
        if orders[s].is_empty() {
            let mut o: Vec<usize> = (0..sources[s].0.len()).rev().collect();
            o.shuffle(rng);
            orders[s] = o;
        }
        let i = orders[s].pop().expect("refilled above");
        picked.push(sources[s].0[i].clone());
    }
    Ok(picked.chunks(desc.batch_size).map(<[SftExample]>::to_vec).collect())
}

/// Runs one stage from `params`, returning the updated parameters and one
/// metrics record per update.
pub fn run_stage(desc: &StageDescriptor, data: &StageData, params: PolicyParams) -> Result<(PolicyParams, Vec<StepMetrics>)> {
    run_stage_with(desc, data, params, &mut |_| Ok(()))
}

/// [`run_stage`] with a callback invoked after every update.
pub fn run_stage_with(
    desc: &StageDescriptor,
    data: &StageData,
    params: PolicyParams,
    on_step: &mut dyn FnMut(&StepMetrics) -> Result<()>,
) -> Result<(PolicyParams, Vec<StepMetrics>)> {
    desc.validate()?;
    let kind = desc.kind()?;
    let mut params = params;
    let mut series = Vec::new();
    match kind {
        StageKind::Sft => {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(data.seed));
            for (step, batch) in sft_schedule(desc, data, &mut rng)?.into_iter().enumerate() {
                let (next, loss) = sft_step(&params, &batch, &desc.train)?;
                params = next;
                let text = batch.iter().filter(|e| e.source == super::SftSource::TextQa).count();
                let m = StepMetrics {
                    step,
                    metrics: BTreeMap::from([
                        ("loss".to_string(), loss),
                        ("batch".to_string(), batch.len() as f64),
                        ("text_fraction".to_string(), text as f64 / batch.len() as f64),
                    ]),
                };
                on_step(&m)?;
                series.push(m);
            }
        }
        StageKind::RlPlain | StageKind::RlAgentic => {
            if data.rl_pool.is_empty() {
                if desc.train.steps == 0 {
                    return Ok((params, series));
                }
                return Err(Error::Config("RL stage needs a non-empty scene pool".into()));
            }
            let filter_mask = (kind == StageKind::RlPlain).then(|| data.vocab.without_tools());
            let filter = filter_mask.as_deref();
            for step in 0..desc.train.steps {
                let scenes: Vec<Scene> = (0..desc.scenes_per_step)
                    .map(|j| data.scenes.generate(data.rl_pool[(step * desc.scenes_per_step + j) % data.rl_pool.len()]))
                    .collect();
                let mut groups = Vec::with_capacity(scenes.len());
                let (mut ok, mut fmt, mut calls, mut zoomed, mut len, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for scene in &scenes {
                    let (trajs, rewards) = collect_group(
                        &params,
                        data.vocab,
                        scene,
                        &desc.limits,
                        &desc.reward,
                        filter,
                        desc.train.group_size,
                        data.seed,
                        step as u64,
                    )?;
                    for (t, r) in trajs.iter().zip(&rewards) {
                        ok += f64::from(r.s_ok);
                        fmt += f64::from(u8::from(t.format_ok));
                        calls += t.tool_calls as f64;
                        zoomed += f64::from(u8::from(t.successful_zooms > 0));
                        len += t.logprobs.len() as f64;
                        n += 1.0;
                    }
                    let totals = rewards.iter().map(|r| r.total).collect();
                    groups.push(GroupBatch::from_rollouts(scene.episode_index, trajs, totals)?);
                }
                let (next, stats) = grpo_step(&params, &params, &groups, &desc.train, filter)?;
                params = next;
                let m = StepMetrics {
                    step,
                    metrics: BTreeMap::from([
                        ("loss".to_string(), stats.loss),
                        ("mean_reward".to_string(), stats.mean_reward),
                        ("accuracy".to_string(), ok / n),
                        ("format_rate".to_string(), fmt / n),
                        ("tool_call_rate".to_string(), calls / n),
                        ("zoom_success_rate".to_string(), zoomed / n),
                        ("mean_model_tokens".to_string(), len / n),
                        ("clip_fraction".to_string(), stats.clip_fraction),
                        ("kl".to_string(), stats.kl),
                        ("grad_norm".to_string(), stats.grad_norm),
                    ]),
                };
                on_step(&m)?;
                series.push(m);
            }
        }
    }
    Ok((params, series))
}
