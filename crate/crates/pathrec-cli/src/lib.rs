//! Pipeline CLI: stage-artifact orchestration around the recommendation
//! library, with hash-verified manifests so expensive stages (embedding
//! pretraining, provider calls) never rerun by accident.

pub mod config;
pub mod manifest;
pub mod stages;
pub mod synthetic;
