//! Group-relative policy optimization with a clipped probability ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdvantageMode, TrainConfig};
use crate::error::{Error, Result};
use crate::policy::{accumulate_backward, context_window, forward_pass, PolicyParams, TokenFilter, TokenId, PAD_ID};
use crate::rollout::{Role, Trajectory};

/// Rollouts of one query under the reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub query: u64,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    /// Reference log-probabilities, one vector per trajectory aligned with
    /// its model tokens.
    pub ref_logprobs: Vec<Vec<f64>>,
}

impl GroupBatch {
    /// Builds a group whose reference log-probabilities are the ones recorded
    /// at sampling time.
    pub fn from_rollouts(query: u64, trajectories: Vec<Trajectory>, rewards: Vec<f64>) -> Result<Self> {
        let ref_logprobs = trajectories.iter().map(|t| t.logprobs.clone()).collect();
        let g = GroupBatch {
            query,
            trajectories,
            rewards,
            ref_logprobs,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.trajectories.len();
        if n < 2 {
            return Err(Error::Contract(format!("group {} has {n} trajectories, need at least 2", self.query)));
        }
        if self.rewards.len() != n || self.ref_logprobs.len() != n {
            return Err(Error::Contract(format!("group {} has mismatched field lengths", self.query)));
        }
        for (t, r) in self.trajectories.iter().zip(&self.ref_logprobs) {
            if t.model_token_count() != r.len() {
                return Err(Error::Contract(format!(
                    "group {}: {} reference log-probabilities for {} model tokens",
                    self.query,
                    r.len(),
                    t.model_token_count()
                )));
            }
        }
        Ok(())
    }
}

/// Group-relative advantages: reward minus group mean, optionally divided by
/// the group standard deviation (floored at 1e-8).
pub fn grpo_advantages(rewards: &[f64], mode: AdvantageMode) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    match mode {
        AdvantageMode::MeanBaseline => centered,
        AdvantageMode::MeanStdNormalized => {
            let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt().max(1e-8);
            centered.iter().map(|c| c / std).collect()
        }
    }
}

/// Current-over-reference probability ratios for every model token, grouped
/// per trajectory.
pub fn token_ratios(params: &PolicyParams, group: &GroupBatch, filter: TokenFilter) -> Result<Vec<Vec<f64>>> {
    group.validate()?;
    group
        .trajectories
        .iter()
        .zip(&group.ref_logprobs)
        .map(|(traj, refs)| {
            let ids = traj.ids();
            let mut m = 0;
            let mut out = Vec::with_capacity(refs.len());
            for (i, tok) in traj.tokens.iter().enumerate() {
                if tok.role != Role::Model {
                    continue;
                }
                let ctx = context_window(&ids[..i], params.dims.window, PAD_ID);
                let lp = forward_pass(params, &ctx, filter)?.logprob(tok.id);
                let ratio = (lp - refs[m]).exp();
                if !ratio.is_finite() {
                    return Err(Error::Numeric(format!("non-finite ratio at model token {m} (logprob {lp}, reference {})", refs[m])));
                }
                out.push(ratio);
                m += 1;
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GrpoStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub clip_fraction: f64,
    pub kl: f64,
    pub tokens: usize,
    pub grad_norm: f64,
}

struct Partial {
    surrogate: f64,
    kl: f64,
    clipped: usize,
    grad: PolicyParams,
}

fn kl_and_dlogits(p: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    let logs: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { (pi / qi).ln() } else { 0.0 })
        .collect();
    let kl: f64 = p.iter().zip(&logs).map(|(pi, l)| pi * l).sum();
    let d = p.iter().zip(&logs).map(|(pi, l)| pi * (l - kl)).collect();
    (kl, d)
}

fn trajectory_terms(
    params: &PolicyParams,
    ref_params: Option<&PolicyParams>,
    traj: &Trajectory,
    refs: &[f64],
    advantage: f64,
    config: &TrainConfig,
    filter: TokenFilter,
) -> Result<Partial> {
    let ids: Vec<TokenId> = traj.ids();
    let mut grad = PolicyParams::zeros(params.dims);
    let (mut surrogate, mut kl_sum, mut clipped) = (0.0, 0.0, 0);
    let (lo, hi) = (1.0 - config.clip, 1.0 + config.clip);
    let mut m = 0;
    for (i, tok) in traj.tokens.iter().enumerate() {
        if tok.role != Role::Model {
            continue;
        }
        let ctx = context_window(&ids[..i], params.dims.window, PAD_ID);
        let pass = forward_pass(params, &ctx, filter)?;
        let lp = pass.logprob(tok.id);
        let ratio = (lp - refs[m]).exp();
        if !ratio.is_finite() {
            return Err(Error::Numeric(format!("non-finite ratio (logprob {lp}, reference {})", refs[m])));
        }
        m += 1;
        let unclipped = ratio * advantage;
        let bounded = ratio.clamp(lo, hi) * advantage;
        surrogate += unclipped.min(bounded);
        // d(-objective)/dlogits; zero when the clipped branch is the binding one.
        let mut dlogits = vec![0.0; pass.probs.len()];
        if bounded < unclipped {
            clipped += 1;
        } else if advantage != 0.0 {
            let c = -advantage * ratio;
            for (d, p) in dlogits.iter_mut().zip(&pass.probs) {
                *d = -c * p;
            }
            dlogits[tok.id] += c;
        }
        // With identical parameters the KL term and its gradient vanish.
        if let Some(reference) = ref_params {
            let ref_pass = forward_pass(reference, &ctx, filter)?;
            let (kl, dkl) = kl_and_dlogits(&pass.probs, &ref_pass.probs);
            kl_sum += kl;
            if config.kl_coefficient > 0.0 {
                for (d, k) in dlogits.iter_mut().zip(&dkl) {
                    *d += config.kl_coefficient * k;
                }
            }
        }
        if dlogits.iter().any(|&d| d != 0.0) {
            accumulate_backward(params, &pass, &dlogits, 1.0, &mut grad);
        }
    }
    Ok(Partial {
        surrogate,
        kl: kl_sum,
        clipped,
        grad,
    })
}

/// Loss `-mean(min(ρA, clip(ρ)A)) + β·mean KL(current ‖ reference)` over all
/// model tokens of all groups, its gradient, and step statistics.
pub fn grpo_objective(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    groups: &[GroupBatch],
    config: &TrainConfig,
    filter: TokenFilter,
) -> Result<(f64, PolicyParams, GrpoStats)> {
    if groups.is_empty() {
        return Err(Error::Contract("GRPO step needs at least one group".into()));
    }
    let mut jobs = Vec::new();
    for g in groups {
        g.validate()?;
        let adv = grpo_advantages(&g.rewards, config.advantage_mode);
        for ((t, r), a) in g.trajectories.iter().zip(&g.ref_logprobs).zip(adv) {
            jobs.push((t, r.as_slice(), a));
        }
    }
    let reference = (params != ref_params).then_some(ref_params);
    let parts: Vec<Partial> = jobs
        .par_iter()
        .map(|&(t, r, a)| trajectory_terms(params, reference, t, r, a, config, filter))
        .collect::<Result<_>>()?;

    let tokens: usize = jobs.iter().map(|(_, r, _)| r.len()).sum();
    let mut grad = PolicyParams::zeros(params.dims);
    let (mut surrogate, mut kl, mut clipped) = (0.0, 0.0, 0);
    for p in &parts {
        surrogate += p.surrogate;
        kl += p.kl;
        clipped += p.clipped;
        grad.add_scaled(&p.grad, 1.0);
    }
    let n = tokens.max(1) as f64;
    grad.scale(1.0 / n);
    let rewards: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().copied()).collect();
    let stats = GrpoStats {
        loss: -surrogate / n + config.kl_coefficient * kl / n,
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        clip_fraction: clipped as f64 / n,
        kl: kl / n,
        tokens,
        grad_norm: grad.norm(),
    };
    Ok((stats.loss, grad, stats))
}

/// One gradient-descent update on the GRPO loss.
pub fn grpo_step(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    groups: &[GroupBatch],
    config: &TrainConfig,
    filter: TokenFilter,
) -> Result<(PolicyParams, GrpoStats)> {
    let (_, grad, stats) = grpo_objective(params, ref_params, groups, config, filter)?;
    let mut next = params.clone();
    next.add_scaled(&grad, -config.learning_rate);
    next.check_finite()?;
    Ok((next, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_params, logprob_and_grad, PolicyDims};
    use crate::rollout::Token;

    #[test]
    fn advantage_examples() {
        assert_eq!(
            grpo_advantages(&[2.0, 0.5, 2.0, 0.5], AdvantageMode::MeanBaseline),
            vec![0.75, -0.75, 0.75, -0.75]
        );
        assert_eq!(grpo_advantages(&[1.0; 4], AdvantageMode::MeanBaseline), vec![0.0; 4]);
        assert_eq!(grpo_advantages(&[0.0, 2.0], AdvantageMode::MeanStdNormalized), vec![-1.0, 1.0]);
        assert_eq!(grpo_advantages(&[1.0; 3], AdvantageMode::MeanStdNormalized), vec![0.0; 3]);
    }

    fn dims() -> PolicyDims {
        PolicyDims {
            vocab: 6,
            embed: 3,
            hidden: 5,
            window: 3,
        }
    }

    fn traj(ids: &[(usize, Role)], params: &PolicyParams) -> Trajectory {
        let tokens: Vec<Token> = ids.iter().map(|&(i, r)| Token::new(i, r)).collect();
        let all: Vec<usize> = tokens.iter().map(|t| t.id).collect();
        let logprobs = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::Model)
            .map(|(i, t)| forward_pass(params, &context_window(&all[..i], 3, PAD_ID), None).unwrap().logprob(t.id))
            .collect();
        Trajectory {
            tokens,
            logprobs,
            tool_calls: 0,
            successful_zooms: 0,
            parsed_answer: None,
            format_ok: false,
            truncated: false,
        }
    }

    fn group(params: &PolicyParams, rewards: Vec<f64>) -> GroupBatch {
        let t1 = traj(&[(1, Role::Prompt), (2, Role::Model), (4, Role::Observation), (3, Role::Model)], params);
        let t2 = traj(&[(1, Role::Prompt), (5, Role::Model), (3, Role::Model)], params);
        GroupBatch::from_rollouts(0, vec![t1, t2], rewards).unwrap()
    }

    #[test]
    fn identical_params_give_unit_ratios() {
        let p = init_params(2, dims()).unwrap();
        for r in token_ratios(&p, &group(&p, vec![1.0, 0.0]), None).unwrap() {
            assert!(r.iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn zero_advantage_leaves_params_unchanged() {
        let p = init_params(2, dims()).unwrap();
        let (next, stats) = grpo_step(&p, &p, &[group(&p, vec![1.0, 1.0])], &TrainConfig::default(), None).unwrap();
        assert_eq!(next, p);
        assert_eq!(stats.kl, 0.0);
    }

    #[test]
    fn reference_point_gradient_is_reinforce_with_baseline() {
        let p = init_params(3, dims()).unwrap();
        let g = group(&p, vec![2.0, 0.5]);
        let (_, grad, stats) = grpo_objective(&p, &p, std::slice::from_ref(&g), &TrainConfig::default(), None).unwrap();
        assert_eq!(stats.clip_fraction, 0.0);
        let adv = grpo_advantages(&g.rewards, AdvantageMode::MeanBaseline);
        let mut expected = PolicyParams::zeros(p.dims);
        let mut n = 0;
        for (t, a) in g.trajectories.iter().zip(adv) {
            let ids = t.ids();
            for (i, tok) in t.tokens.iter().enumerate() {
                if tok.role == Role::Model {
                    let (_, gl) = logprob_and_grad(&p, &context_window(&ids[..i], 3, PAD_ID), tok.id).unwrap();
                    expected.add_scaled(&gl, -a);
                    n += 1;
                }
            }
        }
        expected.scale(1.0 / n as f64);
        for (x, y) in grad.values.iter().zip(&expected.values) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn kl_is_positive_away_from_reference() {
        let p = init_params(3, dims()).unwrap();
        let q = init_params(4, dims()).unwrap();
        let g = group(&q, vec![1.0, 0.0]);
        let cfg = TrainConfig {
            kl_coefficient: 0.1,
            ..TrainConfig::default()
        };
        let (_, _, stats) = grpo_objective(&p, &q, &[g], &cfg, None).unwrap();
        assert!(stats.kl > 0.0);
    }
}
