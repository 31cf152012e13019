//! Synthetic ultra-high-resolution scenes.
//!
//! A scene is a `grid_side × grid_side` grid of glyph classes split into
//! `tile_side × tile_side` coarse tiles. The coarse view keeps one majority
//! class per tile, so questions about a marked tile generally need a zoom to
//! be answered.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::rulebase::{DomainSpec, RuleBase, VALUE_COUNT};

const SCENE_KEY: u64 = 0x5343_454e_4553;
const MAX_LAYOUT_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub grid_side: usize,
    pub tile_side: usize,
    pub glyph_alphabet_size: u8,
    pub target_density: f64,
    pub rule_count: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            grid_side: 64,
            tile_side: 8,
            glyph_alphabet_size: 6,
            target_density: 0.5,
            rule_count: 6,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_side == 0 || self.tile_side == 0 {
            return Err(Error::Config("grid_side and tile_side must be positive".into()));
        }
        if self.grid_side % self.tile_side != 0 {
            return Err(Error::Config(format!(
                "tile_side {} must divide grid_side {}",
                self.tile_side, self.grid_side
            )));
        }
        if self.glyph_alphabet_size < 2 {
            return Err(Error::Config("glyph_alphabet_size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.target_density) {
            return Err(Error::Config(format!(
                "target_density {} must lie in [0, 1]",
                self.target_density
            )));
        }
        Ok(())
    }

    pub fn tile_count(&self) -> usize {
        self.tile_side * self.tile_side
    }

    /// Cells along one side of a tile.
    pub fn patch_side(&self) -> usize {
        self.grid_side / self.tile_side
    }

    pub fn cells_per_tile(&self) -> usize {
        self.patch_side() * self.patch_side()
    }

    pub fn domain(&self) -> DomainSpec {
        DomainSpec {
            glyph_classes: self.glyph_alphabet_size - 1,
            rule_count: self.rule_count,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionType {
    /// Class of the anchor (first) cell of the marked tile.
    GlyphAtMark,
    /// Number of cells of a given class inside the marked tile.
    CountClass,
    /// Most frequent non-background class in the marked tile, "0" if none.
    DominantClass,
    /// Decision rule applied to the anchor glyph of the marked tile.
    RuleApply,
}

impl QuestionType {
    pub const ALL: [QuestionType; 4] = [
        QuestionType::GlyphAtMark,
        QuestionType::CountClass,
        QuestionType::DominantClass,
        QuestionType::RuleApply,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub qtype: QuestionType,
    pub rule_id: Option<usize>,
    /// Class argument of count-class questions.
    pub target_class: Option<u8>,
    pub surface_text: Vec<String>,
    pub answer_vocabulary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub spec: SceneSpec,
    pub episode_index: u64,
    /// Row-major glyph classes; 0 is background.
    pub cells: Vec<u8>,
    pub marked_region: Option<usize>,
    pub question: Question,
    pub answer_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservationToken {
    Glyph(u8),
    InvalidTile,
    BudgetExceeded,
}

/// Majority class with ties resolved to the lowest class id.
pub fn majority_class(cells: &[u8], alphabet: u8) -> u8 {
    let mut counts = vec![0usize; alphabet as usize];
    for &c in cells {
        counts[c as usize] += 1;
    }
    let mut best = 0;
    for (class, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = class;
        }
    }
    best as u8
}

/// Lowercase, trim, and collapse internal whitespace.
pub fn normalize_answer(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Returns 1 iff the normalized answer equals the scene's answer key.
pub fn judge(scene: &Scene, answer_text: &str) -> u8 {
    let norm = normalize_answer(answer_text);
    u8::from(!norm.is_empty() && norm == scene.answer_key)
}

impl Scene {
    pub fn tile_cells(&self, tile: usize) -> Vec<u8> {
        tile_cells(&self.spec, &self.cells, tile)
    }

    /// Glyph class of the first cell of `tile`.
    pub fn anchor(&self, tile: usize) -> u8 {
        self.tile_cells(tile)[0]
    }
}

/// Row-major cells of `tile` (tiles are themselves numbered row-major).
pub fn tile_cells(spec: &SceneSpec, cells: &[u8], tile: usize) -> Vec<u8> {
    let ps = spec.patch_side();
    let (tr, tc) = (tile / spec.tile_side, tile % spec.tile_side);
    let mut out = Vec::with_capacity(ps * ps);
    for r in tr * ps..(tr + 1) * ps {
        let row = r * spec.grid_side;
        out.extend_from_slice(&cells[row + tc * ps..row + (tc + 1) * ps]);
    }
    out
}

/// One majority token per coarse tile.
pub fn coarse_observation(scene: &Scene) -> Vec<ObservationToken> {
    (0..scene.spec.tile_count())
        .map(|t| ObservationToken::Glyph(majority_class(&scene.tile_cells(t), scene.spec.glyph_alphabet_size)))
        .collect()
}

/// Exact cells of one tile; an out-of-range index yields a single
/// `InvalidTile` token instead of an error.
pub fn zoom(scene: &Scene, tile_index: usize) -> Vec<ObservationToken> {
    if tile_index >= scene.spec.tile_count() {
        return vec![ObservationToken::InvalidTile];
    }
    scene.tile_cells(tile_index).into_iter().map(ObservationToken::Glyph).collect()
}

/// Answer of a non-rule question computed from the cells of the marked tile.
pub fn tile_answer(qtype: QuestionType, tile: &[u8], target_class: Option<u8>) -> Option<u8> {
    match qtype {
        QuestionType::GlyphAtMark => tile.first().copied(),
        QuestionType::CountClass => {
            let c = target_class?;
            Some(tile.iter().filter(|&&x| x == c).count() as u8)
        }
        QuestionType::DominantClass => {
            let top = tile.iter().copied().max().unwrap_or(0);
            let mut counts = vec![0usize; top as usize + 1];
            for &x in tile {
                counts[x as usize] += 1;
            }
            let mut best = 0usize;
            for class in 1..counts.len() {
                if counts[class] > 0 && (best == 0 || counts[class] > counts[best]) {
                    best = class;
                }
            }
            Some(best as u8)
        }
        QuestionType::RuleApply => None,
    }
}

/// Searches single-cell edits of `tile` for one that keeps the majority class
/// but changes the answer: a witness that the coarse view is insufficient.
fn has_evidence_gap(qtype: QuestionType, tile: &[u8], target_class: Option<u8>, alphabet: u8) -> bool {
    let summary = majority_class(tile, alphabet);
    let answer = tile_answer(qtype, tile, target_class);
    let mut edited = tile.to_vec();
    for i in 0..tile.len() {
        let original = edited[i];
        for class in 0..alphabet {
            if class == original {
                continue;
            }
            edited[i] = class;
            if majority_class(&edited, alphabet) == summary && tile_answer(qtype, &edited, target_class) != answer {
                return true;
            }
        }
        edited[i] = original;
    }
    false
}

/// Scene factory holding the shared rule base.
#[derive(Debug, Clone)]
pub struct SceneGenerator {
    spec: SceneSpec,
    rulebase: RuleBase,
}

impl SceneGenerator {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let rulebase = RuleBase::synthetic(spec.domain())?;
        Ok(SceneGenerator { spec, rulebase })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn rulebase(&self) -> &RuleBase {
        &self.rulebase
    }

    pub fn generate(&self, episode_index: u64) -> Scene {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SCENE_KEY);
        rng.set_stream(episode_index);
        let alphabet = spec.glyph_alphabet_size;
        let n_cells = spec.grid_side * spec.grid_side;

        let mut qtypes: Vec<QuestionType> = QuestionType::ALL
            .into_iter()
            .filter(|q| *q != QuestionType::RuleApply || spec.rule_count > 0)
            .collect();
        let first = rng.gen_range(0..qtypes.len());
        qtypes.rotate_left(first);

        let mut cells = vec![0u8; n_cells];
        for _ in 0..MAX_LAYOUT_ATTEMPTS {
            for c in cells.iter_mut() {
                *c = if rng.gen_bool(spec.target_density) {
                    rng.gen_range(1..alphabet)
                } else {
                    0
                };
            }
            let mut tiles: Vec<usize> = (0..spec.tile_count()).collect();
            tiles.shuffle(&mut rng);
            let rule = (spec.rule_count > 0).then(|| rng.gen_range(0..spec.rule_count));
            let target_class = rng.gen_range(1..alphabet);
            for &qtype in &qtypes {
                for &tile in &tiles {
                    let patch = tile_cells(spec, &cells, tile);
                    let answer = match qtype {
                        QuestionType::RuleApply => {
                            let anchor = patch[0];
                            if anchor == 0 {
                                continue;
                            }
                            match self.rulebase.apply(rule.expect("rule-apply requires rules"), anchor) {
                                Some(v) => v,
                                None => continue,
                            }
                        }
                        _ => {
                            let tc = (qtype == QuestionType::CountClass).then_some(target_class);
                            if !has_evidence_gap(qtype, &patch, tc, alphabet) {
                                continue;
                            }
                            tile_answer(qtype, &patch, tc).expect("non-rule answer")
                        }
                    };
                    let question = self.question(qtype, tile, rule, target_class);
                    return Scene {
                        spec: *spec,
                        episode_index,
                        cells,
                        marked_region: Some(tile),
                        question,
                        answer_key: answer.to_string(),
                    };
                }
            }
        }
        // Only reachable with degenerate layouts (e.g. single-cell tiles);
        // fall back to an unconstrained glyph-at-mark question on tile 0.
        let answer = tile_cells(spec, &cells, 0)[0];
        Scene {
            spec: *spec,
            episode_index,
            question: self.question(QuestionType::GlyphAtMark, 0, None, 1),
            cells,
            marked_region: Some(0),
            answer_key: answer.to_string(),
        }
    }

    fn question(&self, qtype: QuestionType, tile: usize, rule: Option<usize>, target_class: u8) -> Question {
        let alphabet = self.spec.glyph_alphabet_size;
        let range = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
        let (text, vocab, rule_id, class) = match qtype {
            QuestionType::GlyphAtMark => (
                format!("which glyph occupies the anchor cell of tile {tile} ?"),
                range(alphabet as usize),
                None,
                None,
            ),
            QuestionType::CountClass => (
                format!("how many cells of class {target_class} lie in tile {tile} ?"),
                range(self.spec.cells_per_tile() + 1),
                None,
                Some(target_class),
            ),
            QuestionType::DominantClass => (
                format!("which non-background class dominates tile {tile} ?"),
                range(alphabet as usize),
                None,
                None,
            ),
            QuestionType::RuleApply => {
                let k = rule.expect("rule id");
                (
                    format!("what does rule {k} yield for the anchor glyph of tile {tile} ?"),
                    range(VALUE_COUNT),
                    Some(k),
                    None,
                )
            }
        };
        Question {
            qtype,
            rule_id,
            target_class: class,
            surface_text: text.split_whitespace().map(String::from).collect(),
            answer_vocabulary: vocab,
        }
    }
}

/// Convenience wrapper building a one-off generator.
pub fn generate_scene(spec: &SceneSpec, episode_index: u64) -> Result<Scene> {
    Ok(SceneGenerator::new(*spec)?.generate(episode_index))
}
