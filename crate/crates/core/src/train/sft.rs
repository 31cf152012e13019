use rayon::prelude::*;

use super::data::SftExample;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::policy::{accumulate_backward, context_window, forward_pass, logprob_dlogits, PolicyParams, TokenId, PAD_ID};
use crate::rollout::Role;

/// Summed NLL and its gradient over the model tokens of one example.
fn example_nll(params: &PolicyParams, ex: &SftExample) -> Result<(f64, PolicyParams)> {
    let ids: Vec<TokenId> = ex.tokens.iter().map(|t| t.id).collect();
    let mut grad = PolicyParams::zeros(params.dims);
    let mut nll = 0.0;
    for (i, tok) in ex.tokens.iter().enumerate() {
        if tok.role != Role::Model {
            continue;
        }
        let ctx = context_window(&ids[..i], params.dims.window, PAD_ID);
        let pass = forward_pass(params, &ctx, None)?;
        nll -= pass.logprob(tok.id);
        accumulate_backward(params, &pass, &logprob_dlogits(&pass, tok.id), -1.0, &mut grad);
    }
    Ok((nll, grad))
}

/// Mean negative log-likelihood over all model tokens in the batch, with its
/// gradient. Prompt and observation tokens only ever appear as context.
pub fn sft_objective(params: &PolicyParams, batch: &[SftExample]) -> Result<(f64, PolicyParams)> {
    let tokens: usize = batch.iter().map(SftExample::model_tokens).sum();
    if tokens == 0 {
        return Err(Error::Contract("SFT batch has no model tokens".into()));
    }
    let parts: Vec<(f64, PolicyParams)> = batch
        .par_iter()
        .map(|ex| example_nll(params, ex))
        .collect::<Result<_>>()?;
    let mut grad = PolicyParams::zeros(params.dims);
    let mut loss = 0.0;
    for (nll, g) in &parts {
        loss += nll;
        grad.add_scaled(g, 1.0);
    }
    let scale = 1.0 / tokens as f64;
    grad.scale(scale);
    Ok((loss * scale, grad))
}

/// One plain gradient-descent step; returns the new parameters and the
/// pre-update mean loss.
pub fn sft_step(params: &PolicyParams, batch: &[SftExample], config: &TrainConfig) -> Result<(PolicyParams, f64)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty SFT batch".into()));
    }
    let (loss, grad) = sft_objective(params, batch)?;
    let mut next = params.clone();
    next.add_scaled(&grad, -config.learning_rate);
    next.check_finite()?;
    Ok((next, loss))
}
