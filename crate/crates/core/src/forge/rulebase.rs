//! Typed triples, Horn rules, and the synthetic decision-rule domain shared by
//! the scene generator and the QA forge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relation linking a glyph class to its leaf category.
pub const MEMBER_OF: &str = "member_of";
/// Relation linking a category to its parent category.
pub const SUBCLASS_OF: &str = "subclass_of";

/// Number of top-level categories in the synthetic taxonomy.
pub const TOP_CATEGORIES: usize = 2;
/// Children per inner category.
pub const BRANCHING: usize = 2;
/// Total categories: 2 tops, 4 mids, 8 leaves.
pub const CATEGORY_COUNT: usize = TOP_CATEGORIES * (1 + BRANCHING + BRANCHING * BRANCHING);
/// Decision values are single digits.
pub const VALUE_COUNT: usize = 10;

pub fn glyph_entity(glyph: u8) -> String {
    format!("glyph:{glyph}")
}

pub fn category_entity(category: usize) -> String {
    format!("cat:{category}")
}

pub fn value_entity(value: u8) -> String {
    format!("val:{value}")
}

/// Relation name used by decision rule `rule`.
pub fn yields_relation(rule: usize) -> String {
    format!("yields:{rule}")
}

pub fn rule_id(rule: usize) -> String {
    format!("rule:{rule}")
}

/// Parses `prefix:<n>` identifiers such as `glyph:3`.
pub fn parse_indexed(id: &str, prefix: &str) -> Option<usize> {
    id.strip_prefix(prefix)?.strip_prefix(':')?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_string())
    }
}

/// A triple pattern; the relation is always a constant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub head: Term,
    pub relation: String,
    pub tail: Term,
}

impl Pattern {
    pub fn new(head: Term, relation: impl Into<String>, tail: Term) -> Self {
        Pattern {
            head,
            relation: relation.into(),
            tail,
        }
    }

    fn variables(&self) -> impl Iterator<Item = &str> {
        [&self.head, &self.tail].into_iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }
}

/// A Horn clause: all premises matched under one binding imply the conclusion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub premises: Vec<Pattern>,
    pub conclusion: Pattern,
}

pub type Binding = BTreeMap<String, String>;

fn unify_term(term: &Term, value: &str, binding: &mut Binding) -> bool {
    match term {
        Term::Const(c) => c == value,
        Term::Var(v) => match binding.get(v) {
            Some(bound) => bound == value,
            None => {
                binding.insert(v.clone(), value.to_string());
                true
            }
        },
    }
}

fn instantiate_term(term: &Term, binding: &Binding) -> Option<String> {
    match term {
        Term::Const(c) => Some(c.clone()),
        Term::Var(v) => binding.get(v).cloned(),
    }
}

impl Pattern {
    pub(crate) fn matches(&self, triple: &Triple, binding: &Binding) -> Option<Binding> {
        if triple.relation != self.relation {
            return None;
        }
        let mut next = binding.clone();
        if unify_term(&self.head, &triple.head, &mut next) && unify_term(&self.tail, &triple.tail, &mut next) {
            Some(next)
        } else {
            None
        }
    }

    pub(crate) fn instantiate(&self, binding: &Binding) -> Option<Triple> {
        Some(Triple::new(
            instantiate_term(&self.head, binding)?,
            self.relation.clone(),
            instantiate_term(&self.tail, binding)?,
        ))
    }
}

impl Rule {
    /// Every variable of the conclusion must occur in some premise.
    pub fn is_range_restricted(&self) -> bool {
        let bound: BTreeSet<&str> = self.premises.iter().flat_map(Pattern::variables).collect();
        self.conclusion.variables().all(|v| bound.contains(v))
    }
}

/// Base facts plus the rules that close over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RuleBase {
    pub rules: Vec<Rule>,
    pub entity_universe: BTreeSet<String>,
    pub relation_universe: BTreeSet<Triple>,
}

impl RuleBase {
    pub fn empty() -> Self {
        RuleBase::default()
    }

    /// Checks rule-id uniqueness and range restriction. Dangling entity
    /// references are reported by graph construction.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for rule in &self.rules {
            if !seen.insert(rule.id.as_str()) {
                return Err(Error::Construction(format!("duplicate rule id {}", rule.id)));
            }
            if rule.premises.is_empty() {
                return Err(Error::Construction(format!("rule {} has no premises", rule.id)));
            }
            if !rule.is_range_restricted() {
                return Err(Error::Construction(format!(
                    "rule {} concludes on a variable no premise binds",
                    rule.id
                )));
            }
        }
        Ok(())
    }
}

/// Stream reserved for the domain; scene streams use a different key.
const DOMAIN_STREAM: u64 = 0x5275_6c65;

/// Parameters of the synthetic domain: glyph classes attached to a two-level
/// category taxonomy, plus decision rules mapping categories to digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Number of non-background glyph classes (ids `1..=glyph_classes`).
    pub glyph_classes: u8,
    pub rule_count: usize,
    pub seed: u64,
}

/// Taxonomy level at which a decision rule attaches its values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Leaf,
    Mid,
    Top,
}

impl Level {
    pub fn of_rule(rule: usize) -> Level {
        match rule % 3 {
            0 => Level::Leaf,
            1 => Level::Mid,
            _ => Level::Top,
        }
    }

    /// Premise count of a decision rule attached at this level.
    pub fn premise_count(self) -> usize {
        match self {
            Level::Leaf => 2,
            Level::Mid => 3,
            Level::Top => 4,
        }
    }

    pub fn categories(self) -> std::ops::Range<usize> {
        let mids = TOP_CATEGORIES * BRANCHING;
        match self {
            Level::Top => 0..TOP_CATEGORIES,
            Level::Mid => TOP_CATEGORIES..TOP_CATEGORIES + mids,
            Level::Leaf => TOP_CATEGORIES + mids..CATEGORY_COUNT,
        }
    }
}

/// Parent of a non-top category in the fixed balanced taxonomy.
pub fn parent_category(category: usize) -> Option<usize> {
    let mids = Level::Mid.categories();
    let leaves = Level::Leaf.categories();
    if mids.contains(&category) {
        Some((category - mids.start) / BRANCHING)
    } else if leaves.contains(&category) {
        Some(mids.start + (category - leaves.start) / BRANCHING)
    } else {
        None
    }
}

/// Premise chain of decision rule `rule`: member_of, then `level` subclass
/// hops, then the rule's yields fact.
fn decision_rule(rule: usize) -> Rule {
    let level = Level::of_rule(rule);
    let hops = level.premise_count() - 2;
    let mut premises = vec![Pattern::new(Term::var("g"), MEMBER_OF, Term::var("c0"))];
    for hop in 0..hops {
        premises.push(Pattern::new(
            Term::var(&format!("c{hop}")),
            SUBCLASS_OF,
            Term::var(&format!("c{}", hop + 1)),
        ));
    }
    premises.push(Pattern::new(
        Term::var(&format!("c{hops}")),
        yields_relation(rule),
        Term::var("v"),
    ));
    Rule {
        id: rule_id(rule),
        premises,
        conclusion: Pattern::new(Term::var("g"), yields_relation(rule), Term::var("v")),
    }
}

impl RuleBase {
    /// Deterministically builds the synthetic domain for `spec`.
    pub fn synthetic(spec: DomainSpec) -> Result<Self> {
        if spec.glyph_classes == 0 {
            return Err(Error::Config("domain needs at least one non-background glyph class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(DOMAIN_STREAM);

        let mut entities = BTreeSet::new();
        let mut facts = BTreeSet::new();
        for c in 0..CATEGORY_COUNT {
            entities.insert(category_entity(c));
            if let Some(parent) = parent_category(c) {
                facts.insert(Triple::new(category_entity(c), SUBCLASS_OF, category_entity(parent)));
            }
        }
        for v in 0..VALUE_COUNT as u8 {
            entities.insert(value_entity(v));
        }
        let leaves = Level::Leaf.categories();
        for g in 1..=spec.glyph_classes {
            entities.insert(glyph_entity(g));
            let leaf = rng.gen_range(leaves.clone());
            facts.insert(Triple::new(glyph_entity(g), MEMBER_OF, category_entity(leaf)));
        }
        let mut rules = Vec::with_capacity(spec.rule_count);
        for k in 0..spec.rule_count {
            for c in Level::of_rule(k).categories() {
                let v = rng.gen_range(0..VALUE_COUNT as u8);
                facts.insert(Triple::new(category_entity(c), yields_relation(k), value_entity(v)));
            }
            rules.push(decision_rule(k));
        }
        Ok(RuleBase {
            rules,
            entity_universe: entities,
            relation_universe: facts,
        })
    }

    /// Leaf category of a glyph class, if the glyph is part of the domain.
    pub fn leaf_of(&self, glyph: u8) -> Option<usize> {
        let head = glyph_entity(glyph);
        self.relation_universe
            .iter()
            .find(|t| t.head == head && t.relation == MEMBER_OF)
            .and_then(|t| parse_indexed(&t.tail, "cat"))
    }

    /// Category on the glyph's ancestry that carries rule `rule`'s value.
    pub fn pivot_category(&self, rule: usize, glyph: u8) -> Option<usize> {
        let mut category = self.leaf_of(glyph)?;
        let hops = Level::of_rule(rule).premise_count() - 2;
        for _ in 0..hops {
            category = parent_category(category)?;
        }
        Some(category)
    }

    /// Value rule `rule` assigns to category `category`.
    pub fn category_value(&self, rule: usize, category: usize) -> Option<u8> {
        let head = category_entity(category);
        let relation = yields_relation(rule);
        self.relation_universe
            .iter()
            .find(|t| t.head == head && t.relation == relation)
            .and_then(|t| parse_indexed(&t.tail, "val"))
            .map(|v| v as u8)
    }

    /// Value rule `rule` assigns to glyph class `glyph`, following the taxonomy.
    pub fn apply(&self, rule: usize, glyph: u8) -> Option<u8> {
        self.category_value(rule, self.pivot_category(rule, glyph)?)
    }
}
