//! Knowledge graph built by forward chaining a [`RuleBase`] to its closure,
//! with the two retrieval tiers used by candidate verification.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::rulebase::{Binding, RuleBase, Triple};
use crate::error::{Error, Result};

pub const DEFAULT_HOP_BOUND: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Base,
    Derived { rule_id: String, premises: Vec<Triple> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    pub entities: BTreeSet<String>,
    pub relations: BTreeSet<Triple>,
    pub provenance: BTreeMap<Triple, Provenance>,
    pub hop_bound: usize,
    incident: BTreeMap<String, Vec<Triple>>,
}

/// Builds the closure of `rulebase` under its rules.
///
/// Each derived triple keeps the first derivation found, scanning rules in
/// declaration order and facts in sorted order, so rebuilding is deterministic.
pub fn build_knowledge_graph(rulebase: &RuleBase) -> Result<KnowledgeGraph> {
    rulebase.validate()?;
    for t in &rulebase.relation_universe {
        for e in [&t.head, &t.tail] {
            if !rulebase.entity_universe.contains(e) {
                return Err(Error::Construction(format!("triple {t} references unknown entity {e}")));
            }
        }
    }

    let mut provenance: BTreeMap<Triple, Provenance> = rulebase
        .relation_universe
        .iter()
        .map(|t| (t.clone(), Provenance::Base))
        .collect();

    loop {
        let mut by_relation: BTreeMap<&str, Vec<&Triple>> = BTreeMap::new();
        for t in provenance.keys() {
            by_relation.entry(t.relation.as_str()).or_default().push(t);
        }
        let mut fresh: Vec<(Triple, Provenance)> = Vec::new();
        for rule in &rulebase.rules {
            let mut partial: Vec<(Binding, Vec<Triple>)> = vec![(Binding::new(), Vec::new())];
            for premise in &rule.premises {
                let candidates = by_relation.get(premise.relation.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                let mut next = Vec::new();
                for (binding, used) in &partial {
                    for fact in candidates {
                        if let Some(b) = premise.matches(fact, binding) {
                            let mut u = used.clone();
                            u.push((*fact).clone());
                            next.push((b, u));
                        }
                    }
                }
                partial = next;
                if partial.is_empty() {
                    break;
                }
            }
            for (binding, used) in partial {
                let Some(conclusion) = rule.conclusion.instantiate(&binding) else {
                    continue;
                };
                if provenance.contains_key(&conclusion) || fresh.iter().any(|(t, _)| *t == conclusion) {
                    continue;
                }
                fresh.push((
                    conclusion,
                    Provenance::Derived {
                        rule_id: rule.id.clone(),
                        premises: used,
                    },
                ));
            }
        }
        if fresh.is_empty() {
            break;
        }
        provenance.extend(fresh);
    }

    let relations: BTreeSet<Triple> = provenance.keys().cloned().collect();
    let mut incident: BTreeMap<String, Vec<Triple>> = BTreeMap::new();
    for t in &relations {
        incident.entry(t.head.clone()).or_default().push(t.clone());
        if t.tail != t.head {
            incident.entry(t.tail.clone()).or_default().push(t.clone());
        }
    }
    Ok(KnowledgeGraph {
        entities: rulebase.entity_universe.clone(),
        relations,
        provenance,
        hop_bound: DEFAULT_HOP_BOUND,
        incident,
    })
}

impl KnowledgeGraph {
    pub fn with_hop_bound(mut self, hop_bound: usize) -> Self {
        self.hop_bound = hop_bound.max(1);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.relations.contains(triple)
    }

    pub fn contains_entity(&self, entity: &str) -> bool {
        self.entities.contains(entity)
    }

    /// Tails known for `(head, relation, ?)`.
    pub fn objects<'a: 'b, 'b>(&'a self, head: &'b str, relation: &'b str) -> impl Iterator<Item = &'a str> + 'b {
        self.incident
            .get(head)
            .into_iter()
            .flatten()
            .filter(move |t| t.head == head && t.relation == relation)
            .map(|t| t.tail.as_str())
    }

    pub fn incident(&self, entity: &str) -> &[Triple] {
        self.incident.get(entity).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Base facts supporting `triple`, in proof order. A base fact proves itself.
    pub fn proof(&self, triple: &Triple) -> Option<Vec<Triple>> {
        match self.provenance.get(triple)? {
            Provenance::Base => Some(vec![triple.clone()]),
            Provenance::Derived { premises, .. } => {
                let mut out = Vec::new();
                for p in premises {
                    out.extend(self.proof(p)?);
                }
                Some(out)
            }
        }
    }

    /// Tier one: every triple within `hop_bound` hops of the given entities.
    pub fn fine_evidence<'a>(&self, entities: impl IntoIterator<Item = &'a str>) -> BTreeSet<Triple> {
        let mut frontier: BTreeSet<&str> = entities.into_iter().filter(|e| self.contains_entity(e)).collect();
        let mut visited = frontier.clone();
        let mut found = BTreeSet::new();
        for _ in 0..self.hop_bound {
            let mut next = BTreeSet::new();
            for e in &frontier {
                for t in self.incident(e) {
                    found.insert(t.clone());
                    for n in [t.head.as_str(), t.tail.as_str()] {
                        if visited.insert(n) {
                            next.insert(n);
                        }
                    }
                }
            }
            frontier = next;
        }
        found
    }

    /// Tier two: facts incident to each entity plus the premises of every
    /// derived fact among them.
    pub fn context_evidence<'a>(&self, entities: impl IntoIterator<Item = &'a str>) -> BTreeSet<Triple> {
        let mut found = BTreeSet::new();
        for e in entities {
            for t in self.incident(e) {
                found.insert(t.clone());
                if let Some(proof) = self.proof(t) {
                    found.extend(proof);
                }
            }
        }
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::rulebase::{DomainSpec, Pattern, Rule, Term};

    fn transitive_rulebase() -> RuleBase {
        let mut rb = RuleBase::empty();
        for e in ["a", "b", "c"] {
            rb.entity_universe.insert(e.to_string());
        }
        rb.relation_universe.insert(Triple::new("a", "r", "b"));
        rb.relation_universe.insert(Triple::new("b", "r", "c"));
        rb.rules.push(Rule {
            id: "trans".into(),
            premises: vec![
                Pattern::new(Term::var("x"), "r", Term::var("y")),
                Pattern::new(Term::var("y"), "r", Term::var("z")),
            ],
            conclusion: Pattern::new(Term::var("x"), "r", Term::var("z")),
        });
        rb
    }

    /// Independent closure: repeatedly add (x,r,z) for every (x,r,y),(y,r,z).
    fn transitive_closure_oracle(facts: &BTreeSet<(String, String)>) -> BTreeSet<(String, String)> {
        let mut closure = facts.clone();
        loop {
            let mut added = false;
            let snapshot: Vec<_> = closure.iter().cloned().collect();
            for (x, y) in &snapshot {
                for (y2, z) in &snapshot {
                    if y == y2 && closure.insert((x.clone(), z.clone())) {
                        added = true;
                    }
                }
            }
            if !added {
                return closure;
            }
        }
    }

    #[test]
    fn empty_rulebase_gives_empty_graph() {
        let kg = build_knowledge_graph(&RuleBase::empty()).unwrap();
        assert!(kg.is_empty());
    }

    #[test]
    fn transitivity_is_derived() {
        let kg = build_knowledge_graph(&transitive_rulebase()).unwrap();
        assert!(kg.contains(&Triple::new("a", "r", "c")));
        let oracle = transitive_closure_oracle(&[("a", "b"), ("b", "c")].iter().map(|(x, y)| (x.to_string(), y.to_string())).collect());
        let got: BTreeSet<_> = kg.relations.iter().map(|t| (t.head.clone(), t.tail.clone())).collect();
        assert_eq!(got, oracle);
        assert_eq!(
            kg.proof(&Triple::new("a", "r", "c")).unwrap(),
            vec![Triple::new("a", "r", "b"), Triple::new("b", "r", "c")]
        );
    }

    #[test]
    fn longer_chain_matches_oracle() {
        let mut rb = transitive_rulebase();
        for e in ["d", "e"] {
            rb.entity_universe.insert(e.to_string());
        }
        rb.relation_universe.insert(Triple::new("c", "r", "d"));
        rb.relation_universe.insert(Triple::new("d", "r", "e"));
        let kg = build_knowledge_graph(&rb).unwrap();
        let base: BTreeSet<_> = rb.relation_universe.iter().map(|t| (t.head.clone(), t.tail.clone())).collect();
        let got: BTreeSet<_> = kg.relations.iter().map(|t| (t.head.clone(), t.tail.clone())).collect();
        assert_eq!(got, transitive_closure_oracle(&base));
    }

    #[test]
    fn dangling_entity_is_a_construction_error() {
        let mut rb = transitive_rulebase();
        rb.relation_universe.insert(Triple::new("a", "r", "zzz"));
        let err = build_knowledge_graph(&rb).unwrap_err();
        assert!(matches!(err, Error::Construction(ref m) if m.contains("zzz")), "{err}");
    }

    #[test]
    fn rebuild_is_identical() {
        let rb = RuleBase::synthetic(DomainSpec {
            glyph_classes: 5,
            rule_count: 6,
            seed: 3,
        })
        .unwrap();
        assert_eq!(build_knowledge_graph(&rb).unwrap(), build_knowledge_graph(&rb).unwrap());
    }

    #[test]
    fn synthetic_closure_agrees_with_direct_rule_application() {
        let rb = RuleBase::synthetic(DomainSpec {
            glyph_classes: 5,
            rule_count: 6,
            seed: 9,
        })
        .unwrap();
        let kg = build_knowledge_graph(&rb).unwrap();
        for k in 0..6 {
            let rel = crate::forge::rulebase::yields_relation(k);
            for g in 1..=5u8 {
                let head = crate::forge::rulebase::glyph_entity(g);
                let tails: Vec<_> = kg.objects(&head, &rel).collect();
                let expected = crate::forge::rulebase::value_entity(rb.apply(k, g).unwrap());
                assert_eq!(tails, vec![expected.as_str()]);
                let t = Triple::new(head, rel.clone(), expected);
                assert_eq!(kg.proof(&t).unwrap().len(), rb.rules[k].premises.len());
            }
        }
    }

    #[test]
    fn tiers_retrieve_neighbourhoods() {
        let kg = build_knowledge_graph(&transitive_rulebase()).unwrap().with_hop_bound(1);
        let fine = kg.fine_evidence(["c"]);
        assert!(fine.contains(&Triple::new("b", "r", "c")));
        assert!(fine.contains(&Triple::new("a", "r", "c")));
        assert!(!fine.contains(&Triple::new("a", "r", "b")));
        assert!(kg.fine_evidence(["nowhere"]).is_empty());
        let ctx = kg.context_evidence(["c"]);
        assert!(ctx.contains(&Triple::new("a", "r", "b")));
    }
}
