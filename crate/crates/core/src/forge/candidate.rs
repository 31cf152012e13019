//! Templated QA candidates over the synthetic domain, with controlled
//! corruption injection for exercising quality control.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::KnowledgeGraph;
use super::rulebase::{parse_indexed, Triple, MEMBER_OF, SUBCLASS_OF};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TextQType {
    #[serde(rename = "MCQ")]
    Mcq,
    #[serde(rename = "Fill")]
    Fill,
    #[serde(rename = "TF")]
    Tf,
    #[serde(rename = "Free")]
    Free,
}

impl TextQType {
    pub const ALL: [TextQType; 4] = [TextQType::Mcq, TextQType::Fill, TextQType::Tf, TextQType::Free];

    pub fn label(self) -> &'static str {
        match self {
            TextQType::Mcq => "MCQ",
            TextQType::Fill => "Fill",
            TextQType::Tf => "TF",
            TextQType::Free => "Free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    /// Question subject replaced by another glyph; answer left as is.
    EntitySwap,
    /// One reasoning step asserts a wrong tail.
    RelationContradiction,
    /// Entities replaced by ones from outside the domain.
    OffDomain,
}

impl Corruption {
    pub const ALL: [Corruption; 3] = [Corruption::EntitySwap, Corruption::RelationContradiction, Corruption::OffDomain];
}

/// What the question asks about, in structured form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuestionFrame {
    /// Value decision rule `rule` assigns to a glyph.
    RuleValue { rule: usize, subject: String },
    /// Leaf category of a glyph.
    Membership { subject: String },
    /// Parent of a category.
    Parent { subject: String },
}

impl QuestionFrame {
    pub fn subject(&self) -> &str {
        match self {
            QuestionFrame::RuleValue { subject, .. }
            | QuestionFrame::Membership { subject }
            | QuestionFrame::Parent { subject } => subject,
        }
    }

    fn subject_mut(&mut self) -> &mut String {
        match self {
            QuestionFrame::RuleValue { subject, .. }
            | QuestionFrame::Membership { subject }
            | QuestionFrame::Parent { subject } => subject,
        }
    }

    fn relation(&self) -> String {
        match self {
            QuestionFrame::RuleValue { rule, .. } => super::rulebase::yields_relation(*rule),
            QuestionFrame::Membership { .. } => MEMBER_OF.into(),
            QuestionFrame::Parent { .. } => SUBCLASS_OF.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaCandidate {
    pub id: u64,
    pub question_text: Vec<String>,
    pub qtype: TextQType,
    pub proposed_answer: String,
    pub cot_steps: Vec<String>,
    /// Ground-truth label of injected noise; only tests look at it.
    pub corruption_tag: Option<Corruption>,
    pub revision_count: u32,
    pub frame: QuestionFrame,
    /// Triples asserted by `cot_steps`, one per step.
    pub step_triples: Vec<Triple>,
    /// Fact the final answer rests on.
    pub claim: Triple,
    /// MCQ options (entity ids), or the single statement value of a TF item.
    pub options: Vec<String>,
    /// Entities the answer refers to.
    pub answer_entities: Vec<String>,
}

/// Entity-shaped tokens (`prefix:id`) of the question text.
pub fn mentioned_entities(question_text: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in question_text {
        let t = tok.trim_end_matches(['?', '.', ',']);
        if let Some((prefix, rest)) = t.split_once(':') {
            if !prefix.is_empty() && !rest.is_empty() && !out.iter().any(|e| e == t) {
                out.push(t.to_string());
            }
        }
    }
    out
}

pub fn render_step(t: &Triple) -> String {
    format!("{} {} {}", t.head, t.relation, t.tail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub corpus_size: usize,
    /// MCQ / Fill / TF / Free proportions.
    pub type_ratio: [f64; 4],
    pub relevance_threshold: f64,
    pub corruption_rate: f64,
    pub cot_enabled: bool,
    /// Mean number of reasoning steps the generator aims for.
    pub target_cot_steps: f64,
    pub hop_bound: usize,
    pub seed: u64,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            corpus_size: 1000,
            type_ratio: [0.24, 0.07, 0.04, 0.65],
            relevance_threshold: 0.5,
            corruption_rate: 0.0,
            cot_enabled: true,
            target_cot_steps: 2.6,
            hop_bound: super::graph::DEFAULT_HOP_BOUND,
            seed: 0,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.type_ratio.iter().sum();
        if self.type_ratio.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("type_ratio {:?} must be fractions summing to 1", self.type_ratio)));
        }
        if !(0.0..=1.0).contains(&self.relevance_threshold) {
            return Err(Error::Config(format!(
                "relevance_threshold {} must lie in [0, 1]",
                self.relevance_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Config(format!("corruption_rate {} must lie in [0, 1]", self.corruption_rate)));
        }
        if !(self.target_cot_steps >= 1.0) {
            return Err(Error::Config("target_cot_steps must be at least 1".into()));
        }
        if self.hop_bound == 0 {
            return Err(Error::Config("hop_bound must be positive".into()));
        }
        Ok(())
    }
}

/// The interface an external (e.g. model-backed) generator would implement.
pub trait CandidateGenerator {
    fn generate(&self, kg: &KnowledgeGraph, config: &ForgeConfig) -> Result<Vec<QaCandidate>>;

    /// Produces a revised candidate in response to verifier feedback.
    fn revise(&self, cand: &QaCandidate, feedback: &[String]) -> QaCandidate;
}

/// Deterministic template engine.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator;

const FORGE_STREAM: u64 = 0x464f_5247;

struct Domain {
    glyphs: Vec<String>,
    non_top: Vec<(String, String)>,
    values: Vec<String>,
    categories: Vec<String>,
    /// Rule indices keyed by proof length.
    rules_by_steps: BTreeMap<usize, Vec<usize>>,
}

impl Domain {
    fn scan(kg: &KnowledgeGraph) -> Self {
        let with_prefix = |p: &str| -> Vec<String> {
            kg.entities.iter().filter(|e| parse_indexed(e, p).is_some()).cloned().collect()
        };
        let glyphs = with_prefix("glyph");
        let non_top = kg
            .relations
            .iter()
            .filter(|t| t.relation == SUBCLASS_OF)
            .map(|t| (t.head.clone(), t.tail.clone()))
            .collect();
        let mut rules_by_steps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut rules: Vec<usize> = kg
            .relations
            .iter()
            .filter_map(|t| parse_indexed(&t.relation, "yields"))
            .collect();
        rules.sort_unstable();
        rules.dedup();
        if let Some(g) = glyphs.first() {
            for k in rules {
                let rel = super::rulebase::yields_relation(k);
                let tail = kg.objects(g, &rel).next().map(str::to_string);
                if let Some(v) = tail {
                    if let Some(p) = kg.proof(&Triple::new(g.as_str(), rel.as_str(), v)) {
                        rules_by_steps.entry(p.len()).or_default().push(k);
                    }
                }
            }
        }
        Domain {
            glyphs,
            non_top,
            values: with_prefix("val"),
            categories: with_prefix("cat"),
            rules_by_steps,
        }
    }

    fn available_steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rules_by_steps.keys().copied().collect();
        if !self.glyphs.is_empty() || !self.non_top.is_empty() {
            s.insert(0, 1);
        }
        s
    }
}

fn step_count(target: f64, available: &[usize], rng: &mut ChaCha8Rng) -> usize {
    let base = target.floor();
    let want = base as usize + usize::from(rng.gen_bool((target - base).clamp(0.0, 1.0)));
    *available
        .iter()
        .min_by_key(|&&s| (s.abs_diff(want), s))
        .expect("non-empty step set")
}

fn question_text(frame: &QuestionFrame, qtype: TextQType, options: &[String]) -> Vec<String> {
    let s = frame.subject();
    let stem = match frame {
        QuestionFrame::RuleValue { rule, .. } => match qtype {
            TextQType::Fill => format!("rule {rule} assigns ___ to {s} ."),
            TextQType::Tf => format!("true or false : rule {rule} assigns {} to {s} .", options[0]),
            TextQType::Mcq => format!("which value does rule {rule} assign to {s} ?"),
            TextQType::Free => format!("explain which value rule {rule} assigns to {s} ."),
        },
        QuestionFrame::Membership { .. } => match qtype {
            TextQType::Fill => format!("{s} is a member of ___ ."),
            TextQType::Tf => format!("true or false : {s} is a member of {} .", options[0]),
            TextQType::Mcq => format!("which category is {s} a member of ?"),
            TextQType::Free => format!("explain which category {s} belongs to ."),
        },
        QuestionFrame::Parent { .. } => match qtype {
            TextQType::Fill => format!("{s} is a subclass of ___ ."),
            TextQType::Tf => format!("true or false : {s} is a subclass of {} .", options[0]),
            TextQType::Mcq => format!("which category is the parent of {s} ?"),
            TextQType::Free => format!("explain what the parent category of {s} is ."),
        },
    };
    let mut words: Vec<String> = stem.split_whitespace().map(String::from).collect();
    if qtype == TextQType::Mcq {
        for (i, o) in options.iter().enumerate() {
            words.push(format!("({})", char::from(b'A' + i as u8)));
            words.push(o.clone());
        }
    }
    words
}

/// Surface answer for an entity: digits for values, the id otherwise.
pub fn entity_answer(entity: &str) -> String {
    match parse_indexed(entity, "val") {
        Some(v) => v.to_string(),
        None => entity.to_string(),
    }
}

impl TemplateGenerator {
    fn candidate(&self, id: u64, kg: &KnowledgeGraph, domain: &Domain, qtype: TextQType, steps: usize, rng: &mut ChaCha8Rng) -> Option<QaCandidate> {
        let frame = if steps == 1 {
            let membership = !domain.glyphs.is_empty() && (domain.non_top.is_empty() || rng.gen_bool(0.5));
            if membership {
                QuestionFrame::Membership {
                    subject: domain.glyphs.choose(rng)?.clone(),
                }
            } else {
                QuestionFrame::Parent {
                    subject: domain.non_top.choose(rng)?.0.clone(),
                }
            }
        } else {
            QuestionFrame::RuleValue {
                rule: *domain.rules_by_steps.get(&steps)?.choose(rng)?,
                subject: domain.glyphs.choose(rng)?.clone(),
            }
        };
        let relation = frame.relation();
        let tail = kg.objects(frame.subject(), &relation).next()?.to_string();
        let claim = Triple::new(frame.subject(), relation, tail.clone());
        let step_triples = kg.proof(&claim)?;
        let pool = if matches!(frame, QuestionFrame::RuleValue { .. }) {
            &domain.values
        } else {
            &domain.categories
        };

        let (options, proposed_answer, answer_entities) = match qtype {
            TextQType::Fill | TextQType::Free => (Vec::new(), entity_answer(&tail), vec![tail.clone()]),
            TextQType::Mcq => {
                let mut opts: Vec<String> = pool.iter().filter(|e| **e != tail).cloned().collect();
                opts.shuffle(rng);
                opts.truncate(3);
                opts.push(tail.clone());
                opts.shuffle(rng);
                let pos = opts.iter().position(|o| *o == tail)?;
                (opts, char::from(b'A' + pos as u8).to_string(), vec![tail.clone()])
            }
            TextQType::Tf => {
                let truthful = rng.gen_bool(0.5);
                let stated = if truthful {
                    tail.clone()
                } else {
                    pool.iter().filter(|e| **e != tail).choose(rng).cloned().unwrap_or_else(|| tail.clone())
                };
                let answer = if stated == tail { "True" } else { "False" };
                (vec![stated.clone()], answer.to_string(), vec![stated])
            }
        };
        Some(QaCandidate {
            id,
            question_text: question_text(&frame, qtype, &options),
            qtype,
            proposed_answer,
            cot_steps: step_triples.iter().map(render_step).collect(),
            corruption_tag: None,
            revision_count: 0,
            frame,
            step_triples,
            claim,
            options,
            answer_entities,
        })
    }
}

fn ood(entity: &str) -> String {
    format!("ood:{}", entity.replace(':', "-"))
}

fn replace_entity(cand: &mut QaCandidate, from: &str, to: &str) {
    for w in cand.question_text.iter_mut() {
        if w == from {
            *w = to.to_string();
        }
    }
    for t in cand.step_triples.iter_mut().chain(std::iter::once(&mut cand.claim)) {
        if t.head == from {
            t.head = to.to_string();
        }
        if t.tail == from {
            t.tail = to.to_string();
        }
    }
    for o in cand.options.iter_mut() {
        if o == from {
            *o = to.to_string();
        }
    }
}

fn corrupt(cand: &mut QaCandidate, kind: Corruption, domain: &Domain, rng: &mut ChaCha8Rng) {
    match kind {
        Corruption::EntitySwap => {
            let subject = cand.frame.subject().to_string();
            let pool: Vec<&String> = if subject.starts_with("glyph:") {
                domain.glyphs.iter().filter(|g| **g != subject).collect()
            } else {
                domain.non_top.iter().map(|(c, _)| c).filter(|c| **c != subject).collect()
            };
            if let Some(other) = pool.choose(rng) {
                let other = (*other).clone();
                replace_entity(cand, &subject, &other);
                *cand.frame.subject_mut() = other;
            }
        }
        Corruption::RelationContradiction => {
            let i = rng.gen_range(0..cand.step_triples.len());
            let step = &mut cand.step_triples[i];
            let pool = if step.tail.starts_with("val:") {
                &domain.values
            } else {
                &domain.categories
            };
            if let Some(wrong) = pool.iter().filter(|e| **e != step.tail && **e != step.head).choose(rng) {
                step.tail = wrong.clone();
            }
        }
        Corruption::OffDomain => {
            for e in mentioned_entities(&cand.question_text) {
                replace_entity(cand, &e, &ood(&e));
            }
            let s = ood(cand.frame.subject());
            *cand.frame.subject_mut() = s;
        }
    }
    cand.cot_steps = cand.step_triples.iter().map(render_step).collect();
    cand.corruption_tag = Some(kind);
}

impl CandidateGenerator for TemplateGenerator {
    fn generate(&self, kg: &KnowledgeGraph, config: &ForgeConfig) -> Result<Vec<QaCandidate>> {
        config.validate()?;
        if config.corpus_size == 0 {
            return Ok(Vec::new());
        }
        let domain = Domain::scan(kg);
        let available = domain.available_steps();
        if available.is_empty() {
            return Err(Error::Config("knowledge graph has nothing to ask about".into()));
        }
        let types = WeightedIndex::new(config.type_ratio).map_err(|e| Error::Config(format!("type_ratio: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(FORGE_STREAM);
        let mut out = Vec::with_capacity(config.corpus_size);
        while out.len() < config.corpus_size {
            let qtype = TextQType::ALL[types.sample(&mut rng)];
            let steps = step_count(config.target_cot_steps, &available, &mut rng);
            let Some(mut cand) = self.candidate(out.len() as u64, kg, &domain, qtype, steps, &mut rng) else {
                return Err(Error::Config(format!("cannot template a {steps}-step question from this graph")));
            };
            if rng.gen_bool(config.corruption_rate) {
                let kind = *Corruption::ALL.choose(&mut rng).expect("three kinds");
                corrupt(&mut cand, kind, &domain, &mut rng);
            }
            out.push(cand);
        }
        Ok(out)
    }

    /// Rephrases the question; the asserted facts are left untouched.
    fn revise(&self, cand: &QaCandidate, _feedback: &[String]) -> QaCandidate {
        let mut revised = cand.clone();
        revised.question_text.insert(0, "revised :".into());
        revised.revision_count += 1;
        revised
    }
}

/// Candidates from the built-in template generator.
pub fn generate_candidates(kg: &KnowledgeGraph, config: &ForgeConfig) -> Result<Vec<QaCandidate>> {
    TemplateGenerator.generate(kg, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{build_knowledge_graph, DomainSpec, RuleBase};

    fn kg() -> KnowledgeGraph {
        build_knowledge_graph(
            &RuleBase::synthetic(DomainSpec {
                glyph_classes: 5,
                rule_count: 6,
                seed: 1,
            })
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn clean_when_corruption_rate_is_zero() {
        let cands = generate_candidates(&kg(), &ForgeConfig::default()).unwrap();
        assert_eq!(cands.len(), 1000);
        assert!(cands.iter().all(|c| c.corruption_tag.is_none() && c.revision_count == 0));
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = ForgeConfig {
            corruption_rate: 0.3,
            ..ForgeConfig::default()
        };
        assert_eq!(generate_candidates(&kg(), &cfg).unwrap(), generate_candidates(&kg(), &cfg).unwrap());
    }

    #[test]
    fn zero_size_is_empty() {
        let cfg = ForgeConfig {
            corpus_size: 0,
            ..ForgeConfig::default()
        };
        assert!(generate_candidates(&kg(), &cfg).unwrap().is_empty());
    }

    #[test]
    fn mcq_count_matches_multinomial_band() {
        let cfg = ForgeConfig {
            corpus_size: 10_000,
            ..ForgeConfig::default()
        };
        let cands = generate_candidates(&kg(), &cfg).unwrap();
        let mcq = cands.iter().filter(|c| c.qtype == TextQType::Mcq).count();
        assert!((2200..=2600).contains(&mcq), "{mcq}");
    }

    #[test]
    fn steps_chain_from_the_subject() {
        for c in generate_candidates(&kg(), &ForgeConfig::default()).unwrap() {
            assert_eq!(c.step_triples[0].head, c.frame.subject());
            assert_eq!(c.step_triples.last().unwrap().tail, c.claim.tail);
            assert_eq!(c.cot_steps.len(), c.step_triples.len());
        }
    }

    #[test]
    fn invalid_ratio_is_rejected() {
        let cfg = ForgeConfig {
            type_ratio: [0.5, 0.5, 0.5, 0.0],
            ..ForgeConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn mentions_skip_plain_words() {
        let words: Vec<String> = "which value does rule 2 assign to glyph:3 ?".split(' ').map(String::from).collect();
        assert_eq!(mentioned_entities(&words), vec!["glyph:3".to_string()]);
    }
}
