//! Finalized QA records and the end-to-end corpus pipeline.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::candidate::{CandidateGenerator, Corruption, ForgeConfig, QaCandidate, QuestionFrame, TemplateGenerator, TextQType};
use super::graph::{build_knowledge_graph, KnowledgeGraph};
use super::rulebase::{RuleBase, Triple};
use super::verify::{verify_candidate, RejectCause, Verdict, Verification};
use crate::error::{Error, Result};

pub const FINAL_ANSWER_PREFIX: &str = "Therefore, the final answer is:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictMeta {
    pub relevance: f64,
    pub revisions: u32,
    pub evidence_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: u64,
    pub qtype: TextQType,
    pub question: String,
    /// Full response: step lines (when enabled) then the final-answer sentence.
    pub answer: String,
    pub final_answer: String,
    pub cot_steps: Vec<String>,
    pub verdict: VerdictMeta,
    /// Structured form kept for tokenization.
    pub frame: QuestionFrame,
    pub step_triples: Vec<Triple>,
    pub options: Vec<String>,
}

impl QaRecord {
    pub fn step_lines(&self) -> usize {
        self.answer.lines().filter(|l| l.starts_with("Step ")).count()
    }
}

/// Formats an accepted candidate. `verification` must carry an accept verdict.
pub fn assemble_record(cand: &QaCandidate, verification: &Verification, cot_enabled: bool) -> Result<QaRecord> {
    if verification.verdict != Verdict::Accept {
        return Err(Error::Contract(format!(
            "candidate {} was not accepted ({:?})",
            cand.id, verification.verdict
        )));
    }
    if cand.cot_steps.is_empty() {
        return Err(Error::Contract(format!("candidate {} has no reasoning steps", cand.id)));
    }
    let mut lines: Vec<String> = Vec::new();
    if cot_enabled {
        for (i, s) in cand.cot_steps.iter().enumerate() {
            lines.push(format!("Step {}: {s}.", i + 1));
        }
    }
    lines.push(format!("{FINAL_ANSWER_PREFIX} {}", cand.proposed_answer));
    Ok(QaRecord {
        id: cand.id,
        qtype: cand.qtype,
        question: cand.question_text.join(" "),
        answer: lines.join("\n"),
        final_answer: cand.proposed_answer.clone(),
        cot_steps: if cot_enabled { cand.cot_steps.clone() } else { Vec::new() },
        verdict: VerdictMeta {
            relevance: verification.relevance,
            revisions: cand.revision_count,
            evidence_size: verification.evidence.len(),
        },
        frame: cand.frame.clone(),
        step_triples: cand.step_triples.clone(),
        options: cand.options.clone(),
    })
}

/// Outcome of one candidate after the generate-verify-revise loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Screened {
    pub candidate: QaCandidate,
    pub verification: Verification,
}

/// Verifies, revises at most once, and verifies again.
pub fn screen(kg: &KnowledgeGraph, generator: &impl CandidateGenerator, cand: QaCandidate, threshold: f64) -> Screened {
    let verification = verify_candidate(kg, &cand, threshold);
    if verification.verdict != Verdict::Revise {
        return Screened {
            candidate: cand,
            verification,
        };
    }
    let revised = generator.revise(&cand, &verification.issues);
    let verification = verify_candidate(kg, &revised, threshold);
    Screened {
        candidate: revised,
        verification,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForgeReport {
    pub candidates: usize,
    /// Accepted QA pairs.
    pub total_pairs: usize,
    pub per_type: BTreeMap<String, usize>,
    pub type_proportions: BTreeMap<String, f64>,
    pub mean_cot_steps: f64,
    pub max_cot_steps: usize,
    pub revised: usize,
    pub rejections: BTreeMap<String, usize>,
    /// Corruption kind -> (candidates, rejected).
    pub corruption_outcomes: BTreeMap<String, (usize, usize)>,
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(String::from))
        .unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<QaRecord>,
    pub screened: Vec<Screened>,
    pub report: ForgeReport,
}

/// Generate, verify, and assemble a corpus with the template generator.
pub fn forge_corpus(rulebase: &RuleBase, config: &ForgeConfig) -> Result<Corpus> {
    forge_corpus_with(rulebase, config, &TemplateGenerator)
}

pub fn forge_corpus_with(rulebase: &RuleBase, config: &ForgeConfig, generator: &(impl CandidateGenerator + Sync)) -> Result<Corpus> {
    config.validate()?;
    let kg = build_knowledge_graph(rulebase)?.with_hop_bound(config.hop_bound);
    let candidates = generator.generate(&kg, config)?;
    let screened: Vec<Screened> = candidates
        .into_par_iter()
        .map(|c| screen(&kg, generator, c, config.relevance_threshold))
        .collect();

    let mut report = ForgeReport {
        candidates: screened.len(),
        ..ForgeReport::default()
    };
    for t in TextQType::ALL {
        report.per_type.insert(t.label().into(), 0);
    }
    let mut records = Vec::new();
    let mut steps = 0usize;
    for s in &screened {
        let c = &s.candidate;
        if c.revision_count > 0 {
            report.revised += 1;
        }
        let rejected = s.verification.verdict != Verdict::Accept;
        if let Some(kind) = c.corruption_tag {
            let e = report.corruption_outcomes.entry(label(&kind)).or_default();
            e.0 += 1;
            e.1 += usize::from(rejected);
        }
        if rejected {
            let cause = s.verification.cause.unwrap_or(RejectCause::FailedClaims);
            *report.rejections.entry(label(&cause)).or_default() += 1;
            continue;
        }
        let record = assemble_record(c, &s.verification, config.cot_enabled)?;
        *report.per_type.entry(c.qtype.label().into()).or_default() += 1;
        steps += c.cot_steps.len();
        report.max_cot_steps = report.max_cot_steps.max(c.cot_steps.len());
        records.push(record);
    }
    report.total_pairs = records.len();
    if !records.is_empty() {
        report.mean_cot_steps = steps as f64 / records.len() as f64;
        for (k, &n) in &report.per_type {
            report.type_proportions.insert(k.clone(), n as f64 / records.len() as f64);
        }
    }
    Ok(Corpus {
        records,
        screened,
        report,
    })
}

pub fn write_corpus(records: &[QaRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<QaRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn write_report(report: &ForgeReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Corruption kinds that quality control must always catch.
pub const ALWAYS_REJECTED: [Corruption; 2] = [Corruption::RelationContradiction, Corruption::OffDomain];
