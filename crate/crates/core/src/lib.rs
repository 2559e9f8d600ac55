//! Evolutionary optimization where a requirement-anchored judge stands in for
//! the fitness function.
//!
//! An instruction is decomposed into verifiable requirements, candidate
//! solutions are rendered into artifacts, judged per requirement, and improved
//! by feedback-guided mutation under elitist selection. `simlab` supplies
//! deterministic stand-ins for every agent so whole runs can be replayed
//! without network access.

pub mod agents;
pub mod cli;
pub mod config;
pub mod domain;
pub mod engine;
pub mod gateway;
pub mod render;
pub mod runstore;
pub mod simlab;
pub mod stats;
