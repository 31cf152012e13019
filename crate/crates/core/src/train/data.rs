//! Demonstration sequences for supervised stages.
//!
//! Text QA and scene rule questions share one reasoning layout: the rule
//! token, the subject glyph, then the category path down the proof, followed
//! by the answer span.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::rulebase::{parse_indexed, parent_category, Level, RuleBase};
use crate::forge::{QaRecord, QuestionFrame, TextQType};
use crate::policy::{TokenId, TokenKind, Vocabulary};
use crate::rollout::{prompt_tokens, Role, Token};
use crate::scene::{zoom, QuestionType, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftSource {
    TextQa,
    VqaDemo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub tokens: Vec<Token>,
    pub source: SftSource,
}

impl SftExample {
    pub fn new(tokens: Vec<Token>, source: SftSource) -> Result<Self> {
        if !tokens.iter().any(|t| t.role == Role::Model) {
            return Err(Error::Contract("demonstration has no model tokens".into()));
        }
        if source == SftSource::TextQa && tokens.iter().any(|t| t.role == Role::Observation) {
            return Err(Error::Contract("text QA demonstrations cannot carry observations".into()));
        }
        Ok(SftExample { tokens, source })
    }

    pub fn model_tokens(&self) -> usize {
        self.tokens.iter().filter(|t| t.role == Role::Model).count()
    }
}

fn answer_span(vocab: &Vocabulary, answer: &[TokenId]) -> Vec<TokenId> {
    let mut out = vec![vocab.id(TokenKind::AnswerOpen)];
    out.extend_from_slice(answer);
    out.push(vocab.id(TokenKind::AnswerClose));
    out
}

/// Categories from the glyph's leaf up to the rule's pivot.
fn category_path(rulebase: &RuleBase, rule: usize, glyph: u8) -> Option<Vec<usize>> {
    let mut c = rulebase.leaf_of(glyph)?;
    let mut path = vec![c];
    for _ in 0..Level::of_rule(rule).premise_count() - 2 {
        c = parent_category(c)?;
        path.push(c);
    }
    Some(path)
}

/// Expert demonstration for a scene: zoom into the marked tile, reason (for
/// rule questions, when `cot` is set), then answer.
pub fn scene_demo(vocab: &Vocabulary, scene: &Scene, rulebase: &RuleBase, cot: bool) -> Result<SftExample> {
    let mut tokens: Vec<Token> = prompt_tokens(vocab, scene)
        .into_iter()
        .map(|id| Token::new(id, Role::Prompt))
        .collect();
    let model = |ids: &[TokenId], tokens: &mut Vec<Token>| tokens.extend(ids.iter().map(|&id| Token::new(id, Role::Model)));
    if let Some(tile) = scene.marked_region {
        model(&[vocab.id(TokenKind::Zoom(tile))], &mut tokens);
        tokens.extend(zoom(scene, tile).into_iter().map(|o| Token::new(vocab.observation(o), Role::Observation)));
    }
    if cot && scene.question.qtype == QuestionType::RuleApply {
        if let (Some(k), Some(tile)) = (scene.question.rule_id, scene.marked_region) {
            let g = scene.anchor(tile);
            let path = category_path(rulebase, k, g)
                .ok_or_else(|| Error::Contract(format!("glyph {g} has no category path for rule {k}")))?;
            let mut ids = vec![vocab.id(TokenKind::Rule(k)), vocab.id(TokenKind::GlyphRef(g))];
            ids.extend(path.into_iter().map(|c| vocab.id(TokenKind::Category(c))));
            model(&ids, &mut tokens);
        }
    }
    let answer: usize = scene
        .answer_key
        .parse()
        .map_err(|_| Error::Contract(format!("non-numeric answer key {}", scene.answer_key)))?;
    model(&answer_span(vocab, &vocab.number(answer)), &mut tokens);
    SftExample::new(tokens, SftSource::VqaDemo)
}

fn entity_token(vocab: &Vocabulary, entity: &str) -> Option<TokenId> {
    if let Some(g) = parse_indexed(entity, "glyph") {
        return vocab.get(TokenKind::GlyphRef(u8::try_from(g).ok()?));
    }
    if let Some(c) = parse_indexed(entity, "cat") {
        return vocab.get(TokenKind::Category(c));
    }
    if let Some(v) = parse_indexed(entity, "val") {
        return vocab.get(TokenKind::Digit(u8::try_from(v).ok()?));
    }
    None
}

/// Tokenizes a forged record. Returns `None` when the record mentions
/// something the vocabulary cannot express.
pub fn text_example(vocab: &Vocabulary, record: &QaRecord) -> Option<SftExample> {
    let (marker, subject) = match &record.frame {
        QuestionFrame::RuleValue { rule, subject } => (vocab.get(TokenKind::Rule(*rule))?, subject),
        QuestionFrame::Membership { subject } => (vocab.id(TokenKind::MemberOf), subject),
        QuestionFrame::Parent { subject } => (vocab.id(TokenKind::SubclassOf), subject),
    };
    let subject_id = entity_token(vocab, subject)?;
    let mut prompt = vec![vocab.id(TokenKind::AskText(record.qtype)), marker, subject_id];
    for o in &record.options {
        prompt.push(entity_token(vocab, o)?);
    }

    let mut model = Vec::new();
    if !record.cot_steps.is_empty() {
        model.extend([marker, subject_id]);
        for t in &record.step_triples {
            if parse_indexed(&t.tail, "cat").is_some() {
                model.push(entity_token(vocab, &t.tail)?);
            }
        }
    }
    let answer = match record.qtype {
        TextQType::Mcq => {
            let i = record.final_answer.bytes().next()?.checked_sub(b'A')?;
            vocab.get(TokenKind::Choice(i))?
        }
        TextQType::Tf => match record.final_answer.as_str() {
            "True" => vocab.id(TokenKind::True),
            "False" => vocab.id(TokenKind::False),
            _ => return None,
        },
        TextQType::Fill | TextQType::Free => match record.final_answer.parse::<u8>() {
            Ok(d) => vocab.get(TokenKind::Digit(d))?,
            Err(_) => entity_token(vocab, &record.final_answer)?,
        },
    };
    model.extend(answer_span(vocab, &[answer]));

    let mut tokens: Vec<Token> = prompt.into_iter().map(|id| Token::new(id, Role::Prompt)).collect();
    tokens.extend(model.into_iter().map(|id| Token::new(id, Role::Model)));
    SftExample::new(tokens, SftSource::TextQa).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{forge_corpus, ForgeConfig};
    use crate::rollout::{parse_answer, Trajectory};
    use crate::scene::{judge, SceneGenerator, SceneSpec};

    fn spec() -> SceneSpec {
        SceneSpec {
            grid_side: 8,
            tile_side: 4,
            seed: 3,
            ..SceneSpec::default()
        }
    }

    fn as_trajectory(ex: &SftExample) -> Trajectory {
        Trajectory {
            tokens: ex.tokens.clone(),
            logprobs: vec![0.0; ex.model_tokens()],
            tool_calls: 1,
            successful_zooms: 1,
            parsed_answer: None,
            format_ok: false,
            truncated: false,
        }
    }

    #[test]
    fn scene_demos_answer_correctly() {
        let gen = SceneGenerator::new(spec()).unwrap();
        let vocab = Vocabulary::for_scene(&spec());
        for i in 0..50 {
            let s = gen.generate(i);
            let ex = scene_demo(&vocab, &s, gen.rulebase(), true).unwrap();
            let (ans, ok) = parse_answer(&vocab, &as_trajectory(&ex));
            assert!(ok);
            assert_eq!(judge(&s, &ans.unwrap()), 1);
        }
    }

    #[test]
    fn text_examples_have_no_observations() {
        let gen = SceneGenerator::new(spec()).unwrap();
        let vocab = Vocabulary::for_scene(&spec());
        let corpus = forge_corpus(
            gen.rulebase(),
            &ForgeConfig {
                corpus_size: 200,
                ..ForgeConfig::default()
            },
        )
        .unwrap();
        for r in &corpus.records {
            let ex = text_example(&vocab, r).expect("tokenizable");
            assert!(ex.tokens.iter().all(|t| t.role != Role::Observation));
            let (_, ok) = parse_answer(&vocab, &as_trajectory(&ex));
            assert!(ok);
        }
    }

    #[test]
    fn rule_chain_matches_between_text_and_scene() {
        let gen = SceneGenerator::new(spec()).unwrap();
        let rb = gen.rulebase();
        for k in 0..spec().rule_count {
            for g in 1..spec().glyph_alphabet_size {
                let path = category_path(rb, k, g).unwrap();
                assert_eq!(rb.category_value(k, *path.last().unwrap()), rb.apply(k, g));
            }
        }
    }
}
