//! Episodes that interleave policy tokens with zoom observations.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{context_window, forward_pass, sample, PolicyParams, TokenFilter, TokenId, TokenKind, Vocabulary};
use crate::scene::{coarse_observation, zoom, ObservationToken, QuestionType, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Prompt,
    Model,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub role: Role,
}

impl Token {
    pub fn new(id: TokenId, role: Role) -> Self {
        Token { id, role }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tokens: Vec<Token>,
    /// One entry per model token, in order.
    pub logprobs: Vec<f64>,
    pub tool_calls: usize,
    /// Zooms that returned tile content.
    pub successful_zooms: usize,
    pub parsed_answer: Option<String>,
    pub format_ok: bool,
    pub truncated: bool,
}

impl Trajectory {
    pub fn ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn model_token_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.role == Role::Model).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutLimits {
    pub tool_budget: usize,
    pub max_model_tokens: usize,
    pub temperature: f64,
}

impl Default for RolloutLimits {
    fn default() -> Self {
        RolloutLimits {
            tool_budget: 4,
            max_model_tokens: 64,
            temperature: 1.0,
        }
    }
}

impl RolloutLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_model_tokens < 3 {
            return Err(Error::Config(format!(
                "max_model_tokens {} leaves no room for an answer span (need at least 3)",
                self.max_model_tokens
            )));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!("temperature {} must be non-negative", self.temperature)));
        }
        Ok(())
    }
}

/// Question tokens followed by the coarse observation.
pub fn prompt_tokens(vocab: &Vocabulary, scene: &Scene) -> Vec<TokenId> {
    let q = &scene.question;
    let mut ids = vec![vocab.id(TokenKind::Ask(q.qtype))];
    if let Some(tile) = scene.marked_region {
        ids.push(vocab.id(TokenKind::Tile(tile)));
    }
    match q.qtype {
        QuestionType::RuleApply => ids.extend(q.rule_id.and_then(|k| vocab.get(TokenKind::Rule(k)))),
        QuestionType::CountClass => ids.extend(q.target_class.and_then(|c| vocab.get(TokenKind::GlyphRef(c)))),
        _ => {}
    }
    ids.extend(coarse_observation(scene).into_iter().map(|o| vocab.observation(o)));
    ids
}

/// Tokens appended after a zoom action on `tile`, given the zooms already used.
pub fn zoom_observation(scene: &Scene, tile: usize, used: usize, budget: usize) -> Vec<ObservationToken> {
    if used >= budget {
        vec![ObservationToken::BudgetExceeded]
    } else {
        zoom(scene, tile)
    }
}

/// Samples one episode. All randomness comes from `rng`.
pub fn run_episode(
    params: &PolicyParams,
    vocab: &Vocabulary,
    scene: &Scene,
    limits: &RolloutLimits,
    filter: TokenFilter,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut tokens: Vec<Token> = prompt_tokens(vocab, scene)
        .into_iter()
        .map(|id| Token::new(id, Role::Prompt))
        .collect();
    let mut history: Vec<TokenId> = tokens.iter().map(|t| t.id).collect();
    let window = params.dims.window;
    let pad = vocab.pad();
    let end = vocab.id(TokenKind::End);
    let close = vocab.id(TokenKind::AnswerClose);

    let mut logprobs = Vec::new();
    let mut tool_calls = 0;
    let mut successful_zooms = 0;
    let mut finished = false;
    while logprobs.len() < limits.max_model_tokens {
        let ctx = context_window(&history, window, pad);
        let pass = forward_pass(params, &ctx, filter)?;
        let t = sample(&pass.probs, limits.temperature, rng)?;
        logprobs.push(pass.logprob(t));
        tokens.push(Token::new(t, Role::Model));
        history.push(t);
        if let Some(tile) = vocab.zoom_target(t) {
            let obs = zoom_observation(scene, tile, tool_calls, limits.tool_budget);
            tool_calls += 1;
            if matches!(obs.first(), Some(ObservationToken::Glyph(_))) {
                successful_zooms += 1;
            }
            for o in obs {
                let id = vocab.observation(o);
                tokens.push(Token::new(id, Role::Observation));
                history.push(id);
            }
        }
        if t == end || t == close {
            finished = true;
            break;
        }
    }
    let mut traj = Trajectory {
        tokens,
        logprobs,
        tool_calls,
        successful_zooms,
        parsed_answer: None,
        format_ok: false,
        truncated: !finished,
    };
    let (answer, ok) = parse_answer(vocab, &traj);
    traj.parsed_answer = answer;
    traj.format_ok = ok;
    Ok(traj)
}

/// Extracts the answer span from the model tokens.
///
/// The flag is set only for exactly one non-empty, closed span without a zoom
/// inside. The answer is the first closed span's model-token content.
pub fn parse_answer(vocab: &Vocabulary, traj: &Trajectory) -> (Option<String>, bool) {
    let open = vocab.id(TokenKind::AnswerOpen);
    let close = vocab.id(TokenKind::AnswerClose);
    let mut opens = 0;
    let mut closes = 0;
    let mut current: Option<Vec<TokenId>> = None;
    let mut spans: Vec<Vec<TokenId>> = Vec::new();
    for tok in traj.tokens.iter().filter(|t| t.role == Role::Model) {
        if tok.id == open {
            opens += 1;
            current = Some(Vec::new());
        } else if tok.id == close {
            closes += 1;
            if let Some(span) = current.take() {
                spans.push(span);
            }
        } else if let Some(span) = current.as_mut() {
            span.push(tok.id);
        }
    }
    let Some(first) = spans.first() else {
        return (None, false);
    };
    let ok = opens == 1 && closes == 1 && !first.is_empty() && first.iter().all(|&t| vocab.zoom_target(t).is_none());
    (Some(vocab.detokenize(first)), ok)
}

/// 1 on model tokens, 0 elsewhere.
pub fn loss_mask(traj: &Trajectory) -> Vec<u8> {
    traj.tokens.iter().map(|t| u8::from(t.role == Role::Model)).collect()
}

/// Recomputes model-token log-probabilities by teacher forcing.
pub fn replay_logprobs(params: &PolicyParams, vocab: &Vocabulary, tokens: &[Token], filter: TokenFilter) -> Result<Vec<f64>> {
    let ids: Vec<TokenId> = tokens.iter().map(|t| t.id).collect();
    let mut out = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        if tok.role == Role::Model {
            let ctx = context_window(&ids[..i], params.dims.window, vocab.pad());
            out.push(forward_pass(params, &ctx, filter)?.logprob(tok.id));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    episode: u64,
    ids: Vec<TokenId>,
    roles: Vec<Role>,
    logprobs: &'a [f64],
    tool_calls: usize,
    parsed_answer: &'a Option<String>,
    format_ok: bool,
    truncated: bool,
}

/// Debug dump, one trajectory per line.
pub fn write_trajectories(items: &[(u64, &Trajectory)], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (episode, t) in items {
        let line = TrajectoryLine {
            episode: *episode,
            ids: t.ids(),
            roles: t.tokens.iter().map(|t| t.role).collect(),
            logprobs: &t.logprobs,
            tool_calls: t.tool_calls,
            parsed_answer: &t.parsed_answer,
            format_ok: t.format_ok,
            truncated: t.truncated,
        };
        let s = serde_json::to_string(&line).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
