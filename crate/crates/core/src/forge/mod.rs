//! Text QA synthesis with knowledge-graph quality control.

pub mod candidate;
pub mod graph;
pub mod record;
pub mod rulebase;
pub mod verify;

pub use candidate::{
    generate_candidates, CandidateGenerator, Corruption, ForgeConfig, QaCandidate, QuestionFrame, TemplateGenerator,
    TextQType,
};
pub use graph::{build_knowledge_graph, KnowledgeGraph, Provenance};
pub use record::{assemble_record, forge_corpus, read_corpus, write_corpus, write_report, Corpus, ForgeReport, QaRecord};
pub use rulebase::{DomainSpec, Pattern, Rule, RuleBase, Term, Triple};
pub use verify::{relevance_score, verify_candidate, RejectCause, Verdict, Verification};
