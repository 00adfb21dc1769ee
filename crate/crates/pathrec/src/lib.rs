//! Knowledge-graph path reasoning for cold-start sequential recommendation.
//!
//! The pipeline: construct a typed knowledge graph from interactions and
//! item metadata ([`kg`]), pretrain translation embeddings over it
//! ([`embed`]), extract per-user preference hints from an LLM provider and
//! resolve them to metadata-value entities ([`intuition`]), train a
//! path-walking agent whose reward mixes those hints with embedding inner
//! products ([`mdp`], [`policy`]), then beam-search reasoning paths into
//! Top-N recommendations ([`reasoner`]) and score them under a time-based
//! cold-start protocol ([`eval`]).

pub mod embed;
pub mod error;
pub mod eval;
pub mod intuition;
pub mod kg;
pub mod mdp;
pub mod policy;
pub mod reasoner;

pub use error::{Error, Result};
