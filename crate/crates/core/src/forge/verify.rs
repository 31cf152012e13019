//! Knowledge-graph quality control: relevance screening, two-tier evidence
//! retrieval, and claim checking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::candidate::{entity_answer, mentioned_entities, QaCandidate, TextQType};
use super::graph::KnowledgeGraph;
use super::rulebase::Triple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Revise,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectCause {
    /// Relevance below the threshold.
    OffDomain,
    /// An answer entity is unknown to the graph.
    UnsupportedAnswer,
    NoEvidence,
    /// A claim still fails after the one permitted revision.
    FailedClaims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub verdict: Verdict,
    pub cause: Option<RejectCause>,
    pub relevance: f64,
    pub evidence: BTreeSet<Triple>,
    /// Human-readable findings passed back to the generator on revise.
    pub issues: Vec<String>,
}

impl Verification {
    fn reject(cause: RejectCause, relevance: f64) -> Self {
        Verification {
            verdict: Verdict::Reject,
            cause: Some(cause),
            relevance,
            evidence: BTreeSet::new(),
            issues: Vec::new(),
        }
    }
}

/// Fraction of mentioned entities known to the graph; zero when nothing is mentioned.
pub fn relevance_score(kg: &KnowledgeGraph, cand: &QaCandidate) -> f64 {
    let mentions = mentioned_entities(&cand.question_text);
    if mentions.is_empty() {
        return 0.0;
    }
    mentions.iter().filter(|e| kg.contains_entity(e)).count() as f64 / mentions.len() as f64
}

fn check_triple(kg: &KnowledgeGraph, evidence: &BTreeSet<Triple>, t: &Triple, what: &str, issues: &mut Vec<String>) {
    if evidence.contains(t) {
        return;
    }
    let conflicting: Vec<&str> = kg.objects(&t.head, &t.relation).filter(|o| *o != t.tail).collect();
    if conflicting.is_empty() {
        issues.push(format!("{what} {t} is not supported by retrieved evidence"));
    } else {
        issues.push(format!("{what} {t} contradicts ({}, {}, {})", t.head, t.relation, conflicting[0]));
    }
}

fn answer_matches_claim(cand: &QaCandidate) -> bool {
    let tail = &cand.claim.tail;
    match cand.qtype {
        TextQType::Fill | TextQType::Free => cand.proposed_answer == entity_answer(tail),
        TextQType::Mcq => {
            let idx = cand.proposed_answer.bytes().next().map(|b| b.wrapping_sub(b'A') as usize);
            cand.proposed_answer.len() == 1 && idx.and_then(|i| cand.options.get(i)) == Some(tail)
        }
        TextQType::Tf => {
            let stated = cand.options.first();
            let expected = if stated == Some(tail) { "True" } else { "False" };
            stated.is_some() && cand.proposed_answer == expected
        }
    }
}

/// Screens a candidate against the graph.
///
/// Relevance below `threshold` or an answer entity unknown to the graph
/// rejects outright. Otherwise evidence is retrieved in two tiers (the
/// neighbourhood of the answer entities within the hop bound, plus the
/// incident facts and proofs of every question entity) and each reasoning
/// step, the final claim, and the step chain are checked against it. Any
/// failure asks for a revision once and rejects thereafter.
pub fn verify_candidate(kg: &KnowledgeGraph, cand: &QaCandidate, threshold: f64) -> Verification {
    let relevance = relevance_score(kg, cand);
    if relevance < threshold {
        return Verification::reject(RejectCause::OffDomain, relevance);
    }
    if cand.answer_entities.is_empty() || cand.answer_entities.iter().any(|e| !kg.contains_entity(e)) {
        return Verification::reject(RejectCause::UnsupportedAnswer, relevance);
    }
    let mentions = mentioned_entities(&cand.question_text);
    let mut evidence = kg.fine_evidence(cand.answer_entities.iter().map(String::as_str));
    evidence.extend(kg.context_evidence(mentions.iter().map(String::as_str)));
    if evidence.is_empty() {
        return Verification::reject(RejectCause::NoEvidence, relevance);
    }

    let mut issues = Vec::new();
    if cand.step_triples.is_empty() {
        issues.push("no reasoning steps".to_string());
    }
    for (i, t) in cand.step_triples.iter().enumerate() {
        check_triple(kg, &evidence, t, &format!("step {}", i + 1), &mut issues);
    }
    check_triple(kg, &evidence, &cand.claim, "claim", &mut issues);
    if let Some(first) = cand.step_triples.first() {
        if !mentions.contains(&first.head) {
            issues.push(format!("reasoning starts from {}, which the question never mentions", first.head));
        }
    }
    for w in cand.step_triples.windows(2) {
        if w[0].tail != w[1].head {
            issues.push(format!("step {} does not follow from {}", w[1], w[0]));
        }
    }
    if cand.step_triples.last().is_some_and(|t| t.tail != cand.claim.tail) {
        issues.push("reasoning does not reach the claimed answer".to_string());
    }
    if !answer_matches_claim(cand) {
        issues.push(format!("answer {} disagrees with the claim {}", cand.proposed_answer, cand.claim));
    }

    let (verdict, cause) = match (issues.is_empty(), cand.revision_count) {
        (true, _) => (Verdict::Accept, None),
        (false, 0) => (Verdict::Revise, None),
        (false, _) => (Verdict::Reject, Some(RejectCause::FailedClaims)),
    };
    Verification {
        verdict,
        cause,
        relevance,
        evidence,
        issues,
    }
}
