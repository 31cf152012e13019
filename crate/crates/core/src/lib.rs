//! Desk-scale laboratory for staged knowledge injection before tool-augmented
//! reinforcement learning with verifiable rewards.
//!
//! The pipeline: forge a knowledge-graph-verified text QA corpus over a
//! synthetic rule domain, cold-start a small policy with supervised
//! fine-tuning (optionally pre-warming on the same hard scenes used later),
//! run GRPO with a zoom-in tool on synthetic high-resolution scenes, and
//! evaluate with unbiased pass@k.

pub mod error;
pub mod evalkit;
pub mod forge;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod runner;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
