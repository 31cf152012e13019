use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Shape of the fixed-window MLP policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub window: usize,
}

impl PolicyDims {
    pub fn param_count(&self) -> usize {
        let PolicyDims { vocab, embed, hidden, window } = *self;
        vocab * embed + hidden * window * embed + hidden + vocab * hidden + vocab
    }

    fn input_width(&self) -> usize {
        self.window * self.embed
    }

    fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.embed == 0 || self.hidden == 0 || self.window == 0 {
            return Err(Error::Config(format!("policy dims must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Flat parameter vector laid out as
/// `[embedding V×d | W1 h×(w·d) | b1 h | W2 V×h | b2 V]`, all row-major.
///
/// Gradients use the same type and layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub dims: PolicyDims,
    pub values: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl PolicyParams {
    pub fn zeros(dims: PolicyDims) -> Self {
        PolicyParams {
            dims,
            values: vec![0.0; dims.param_count()],
        }
    }

    pub fn from_values(dims: PolicyDims, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if values.len() != dims.param_count() {
            return Err(Error::Format(format!(
                "expected {} parameters for {dims:?}, found {}",
                dims.param_count(),
                values.len()
            )));
        }
        let p = PolicyParams { dims, values };
        p.check_finite()?;
        Ok(p)
    }

    fn offsets(&self) -> Offsets {
        let d = self.dims;
        let w1 = d.vocab * d.embed;
        let b1 = w1 + d.hidden * d.input_width();
        let w2 = b1 + d.hidden;
        let b2 = w2 + d.vocab * d.hidden;
        Offsets { w1, b1, w2, b2 }
    }

    pub fn embedding_row(&self, token: TokenId) -> &[f64] {
        let e = self.dims.embed;
        &self.values[token * e..(token + 1) * e]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!("parameter {i} is {}", self.values[i]))),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn dot(&self, other: &PolicyParams) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Parameters drawn uniformly from `[-0.05, 0.05]`.
pub fn init_params(seed: u64, dims: PolicyDims) -> Result<PolicyParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..dims.param_count()).map(|_| rng.gen_range(-0.05..=0.05)).collect();
    Ok(PolicyParams { dims, values })
}

/// Last `window` tokens of `history`, left-padded with `pad`.
pub fn context_window(history: &[TokenId], window: usize, pad: TokenId) -> Vec<TokenId> {
    let take = history.len().min(window);
    let mut ctx = vec![pad; window - take];
    ctx.extend_from_slice(&history[history.len() - take..]);
    ctx
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub context: Vec<TokenId>,
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardPass {
    pub fn logprob(&self, token: TokenId) -> f64 {
        self.probs[token].ln()
    }
}

/// Allowed-token filter; `None` means the full vocabulary.
pub type TokenFilter<'a> = Option<&'a [bool]>;

/// Forward pass with an optional filter: disallowed tokens get probability
/// exactly zero and the remainder is renormalized.
pub fn forward_pass(params: &PolicyParams, context: &[TokenId], filter: TokenFilter) -> Result<ForwardPass> {
    let d = params.dims;
    if context.len() != d.window {
        return Err(Error::Contract(format!(
            "context has length {}, window is {}",
            context.len(),
            d.window
        )));
    }
    let off = params.offsets();
    let v = &params.values;

    let mut input = Vec::with_capacity(d.input_width());
    for &t in context {
        if t >= d.vocab {
            return Err(Error::Contract(format!("token {t} outside vocabulary of {}", d.vocab)));
        }
        input.extend_from_slice(params.embedding_row(t));
    }

    let iw = d.input_width();
    let mut hidden = Vec::with_capacity(d.hidden);
    for j in 0..d.hidden {
        let row = &v[off.w1 + j * iw..off.w1 + (j + 1) * iw];
        let a: f64 = row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + v[off.b1 + j];
        hidden.push(a.tanh());
    }

    let mut logits = Vec::with_capacity(d.vocab);
    for t in 0..d.vocab {
        let row = &v[off.w2 + t * d.hidden..off.w2 + (t + 1) * d.hidden];
        logits.push(row.iter().zip(&hidden).map(|(w, z)| w * z).sum::<f64>() + v[off.b2 + t]);
    }

    let probs = softmax(&logits, filter)?;
    Ok(ForwardPass {
        context: context.to_vec(),
        input,
        hidden,
        probs,
    })
}

fn softmax(logits: &[f64], filter: TokenFilter) -> Result<Vec<f64>> {
    let allowed = |t: usize| filter.map_or(true, |f| f[t]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(t, _)| allowed(*t))
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric(format!("non-finite logits (max {max})")));
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(t, &l)| if allowed(t) { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numeric(format!("softmax normalizer is {total}")));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Probability distribution over the vocabulary for the next token.
pub fn forward(params: &PolicyParams, context: &[TokenId]) -> Result<Vec<f64>> {
    Ok(forward_pass(params, context, None)?.probs)
}

/// Backpropagates `dlogits` (gradient of some scalar with respect to the
/// logits) and adds `scale` times the parameter gradient into `grad`.
pub fn accumulate_backward(params: &PolicyParams, pass: &ForwardPass, dlogits: &[f64], scale: f64, grad: &mut PolicyParams) {
    let d = params.dims;
    let off = params.offsets();
    let v = &params.values;
    let g = &mut grad.values;
    let iw = d.input_width();

    let mut dhidden = vec![0.0; d.hidden];
    for t in 0..d.vocab {
        let dl = dlogits[t] * scale;
        if dl == 0.0 {
            continue;
        }
        g[off.b2 + t] += dl;
        let base = off.w2 + t * d.hidden;
        for j in 0..d.hidden {
            g[base + j] += dl * pass.hidden[j];
            dhidden[j] += dl * v[base + j];
        }
    }

    let mut dinput = vec![0.0; iw];
    for j in 0..d.hidden {
        let z = pass.hidden[j];
        let da = dhidden[j] * (1.0 - z * z);
        if da == 0.0 {
            continue;
        }
        g[off.b1 + j] += da;
        let base = off.w1 + j * iw;
        for i in 0..iw {
            g[base + i] += da * pass.input[i];
            dinput[i] += da * v[base + i];
        }
    }

    for (pos, &tok) in pass.context.iter().enumerate() {
        let row = tok * d.embed;
        for k in 0..d.embed {
            g[row + k] += dinput[pos * d.embed + k];
        }
    }
}

/// Gradient of `log p(token)` with respect to the logits.
pub fn logprob_dlogits(pass: &ForwardPass, token: TokenId) -> Vec<f64> {
    let mut dl: Vec<f64> = pass.probs.iter().map(|p| -p).collect();
    dl[token] += 1.0;
    dl
}

/// `log P(token | context)` and its gradient with respect to every parameter.
pub fn logprob_and_grad(params: &PolicyParams, context: &[TokenId], token: TokenId) -> Result<(f64, PolicyParams)> {
    if token >= params.dims.vocab {
        return Err(Error::Contract(format!("token {token} outside vocabulary")));
    }
    let pass = forward_pass(params, context, None)?;
    let mut grad = PolicyParams::zeros(params.dims);
    accumulate_backward(params, &pass, &logprob_dlogits(&pass, token), 1.0, &mut grad);
    Ok((pass.logprob(token), grad))
}

/// Draws the next token. Temperature 0 is greedy with lowest-id tie-break;
/// otherwise samples from `p^(1/T)` renormalized (softmax of logits / T).
pub fn sample(distribution: &[f64], temperature: f64, rng: &mut impl Rng) -> Result<TokenId> {
    if temperature.is_nan() || temperature < 0.0 || temperature.is_infinite() {
        return Err(Error::Config(format!("temperature must be finite and non-negative, got {temperature}")));
    }
    if temperature == 0.0 {
        let mut best = 0;
        for (t, &p) in distribution.iter().enumerate() {
            if p > distribution[best] {
                best = t;
            }
        }
        return Ok(best);
    }
    let u: f64 = rng.gen();
    if temperature == 1.0 {
        return Ok(categorical(distribution.iter().copied(), 1.0, u));
    }
    let inv = 1.0 / temperature;
    let max_log = distribution
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = distribution
        .iter()
        .map(|&p| if p > 0.0 { ((p.ln() - max_log) * inv).exp() } else { 0.0 })
        .collect();
    let total = weights.iter().sum();
    Ok(categorical(weights.into_iter(), total, u))
}

fn categorical(weights: impl Iterator<Item = f64>, total: f64, u: f64) -> TokenId {
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (t, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = t;
            acc += w;
            if target < acc {
                return t;
            }
        }
    }
    last_positive
}
