use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::network::TokenId;
use crate::forge::rulebase::{CATEGORY_COUNT, VALUE_COUNT};
use crate::forge::TextQType;
use crate::scene::{ObservationToken, QuestionType, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Pad,
    End,
    AnswerOpen,
    AnswerClose,
    /// Observed glyph class (coarse summary or zoomed cell).
    Glyph(u8),
    InvalidTile,
    BudgetExceeded,
    Zoom(usize),
    Digit(u8),
    True,
    False,
    /// Multiple-choice option letter, 0 = "A".
    Choice(u8),
    Ask(QuestionType),
    AskText(TextQType),
    Tile(usize),
    Rule(usize),
    MemberOf,
    SubclassOf,
    /// Glyph class mentioned as a domain entity.
    GlyphRef(u8),
    Category(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenGroup {
    Structural,
    Observation,
    Action,
    Answer,
    Question,
}

impl TokenKind {
    pub fn group(self) -> TokenGroup {
        use TokenKind::*;
        match self {
            Pad | End | AnswerOpen | AnswerClose => TokenGroup::Structural,
            Glyph(_) | InvalidTile | BudgetExceeded => TokenGroup::Observation,
            Zoom(_) => TokenGroup::Action,
            Digit(_) | True | False | Choice(_) => TokenGroup::Answer,
            Ask(_) | AskText(_) | Tile(_) | Rule(_) | MemberOf | SubclassOf | GlyphRef(_) | Category(_) => {
                TokenGroup::Question
            }
        }
    }

    /// Surface form used when an answer span is detokenized.
    pub fn surface(self) -> String {
        use TokenKind::*;
        match self {
            Digit(d) => d.to_string(),
            True => "true".into(),
            False => "false".into(),
            Choice(i) => char::from(b'A' + i).to_string(),
            Category(c) => format!("cat:{c}"),
            GlyphRef(g) => format!("glyph:{g}"),
            other => format!("<{other:?}>").to_lowercase(),
        }
    }
}

/// Sizes the vocabulary depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub tiles: usize,
    pub glyph_alphabet: u8,
    pub rule_count: usize,
}

impl VocabLayout {
    pub fn for_scene(spec: &SceneSpec) -> Self {
        VocabLayout {
            tiles: spec.tile_count(),
            glyph_alphabet: spec.glyph_alphabet_size,
            rule_count: spec.rule_count,
        }
    }
}

/// Id of the padding token in every vocabulary.
pub const PAD_ID: TokenId = 0;

/// Dense token ids from 0, grouped as structural, observation, action,
/// answer, then question tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    layout: VocabLayout,
    tokens: Vec<TokenKind>,
    index: HashMap<TokenKind, TokenId>,
}

impl Vocabulary {
    pub fn new(layout: VocabLayout) -> Self {
        use TokenKind::*;
        let mut tokens = vec![Pad, End, AnswerOpen, AnswerClose];
        tokens.extend((0..layout.glyph_alphabet).map(Glyph));
        tokens.extend([InvalidTile, BudgetExceeded]);
        tokens.extend((0..layout.tiles).map(Zoom));
        tokens.extend((0..VALUE_COUNT as u8).map(Digit));
        tokens.extend([True, False]);
        tokens.extend((0..4).map(Choice));
        tokens.extend(QuestionType::ALL.map(Ask));
        tokens.extend(TextQType::ALL.map(AskText));
        tokens.extend((0..layout.tiles).map(Tile));
        tokens.extend((0..layout.rule_count).map(Rule));
        tokens.extend([MemberOf, SubclassOf]);
        tokens.extend((1..layout.glyph_alphabet).map(GlyphRef));
        tokens.extend((0..CATEGORY_COUNT).map(Category));
        debug_assert_eq!(tokens[PAD_ID], Pad);
        let index = tokens.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        Vocabulary { layout, tokens, index }
    }

    pub fn for_scene(spec: &SceneSpec) -> Self {
        Vocabulary::new(VocabLayout::for_scene(spec))
    }

    pub fn layout(&self) -> VocabLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn kind(&self, id: TokenId) -> TokenKind {
        self.tokens[id]
    }

    pub fn get(&self, kind: TokenKind) -> Option<TokenId> {
        self.index.get(&kind).copied()
    }

    /// Id of `kind`; panics if the layout does not include it.
    pub fn id(&self, kind: TokenKind) -> TokenId {
        self.get(kind).unwrap_or_else(|| panic!("{kind:?} not in vocabulary"))
    }

    pub fn pad(&self) -> TokenId {
        PAD_ID
    }

    pub fn group(&self, id: TokenId) -> TokenGroup {
        self.tokens[id].group()
    }

    pub fn zoom_target(&self, id: TokenId) -> Option<usize> {
        match self.tokens[id] {
            TokenKind::Zoom(t) => Some(t),
            _ => None,
        }
    }

    pub fn observation(&self, obs: ObservationToken) -> TokenId {
        match obs {
            ObservationToken::Glyph(g) => self.id(TokenKind::Glyph(g)),
            ObservationToken::InvalidTile => self.id(TokenKind::InvalidTile),
            ObservationToken::BudgetExceeded => self.id(TokenKind::BudgetExceeded),
        }
    }

    /// Tokens spelling a non-negative number in decimal.
    pub fn number(&self, n: usize) -> Vec<TokenId> {
        n.to_string()
            .bytes()
            .map(|b| self.id(TokenKind::Digit(b - b'0')))
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&t| self.tokens[t].surface()).collect()
    }

    /// Filter admitting every token except zoom actions.
    pub fn without_tools(&self) -> Vec<bool> {
        self.tokens.iter().map(|k| !matches!(k, TokenKind::Zoom(_))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_groups_disjoint() {
        let v = Vocabulary::for_scene(&SceneSpec::default());
        for id in 0..v.len() {
            assert_eq!(v.id(v.kind(id)), id);
        }
        let actions: Vec<_> = (0..v.len()).filter(|&t| v.group(t) == TokenGroup::Action).collect();
        assert_eq!(actions.len(), 64);
        assert!(actions.iter().all(|&t| v.group(t) != TokenGroup::Answer));
    }

    #[test]
    fn numbers_detokenize() {
        let v = Vocabulary::for_scene(&SceneSpec::default());
        assert_eq!(v.detokenize(&v.number(64)), "64");
        assert_eq!(v.detokenize(&v.number(0)), "0");
        assert_eq!(v.detokenize(&[v.id(TokenKind::True)]), "true");
        assert_eq!(v.detokenize(&[v.id(TokenKind::Choice(1))]), "B");
    }

    #[test]
    fn tool_filter_blocks_only_zoom() {
        let v = Vocabulary::for_scene(&SceneSpec::default());
        let f = v.without_tools();
        for id in 0..v.len() {
            assert_eq!(f[id], v.zoom_target(id).is_none());
        }
    }
}
