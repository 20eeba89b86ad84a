//! Dynamic knowledge-delta benchmark engine and retrieval-interactive QA
//! harness.
//!
//! The pipeline turns successive corpus snapshots into a temporally
//! maintained QA / dialogue benchmark (ingest -> sentence labeling ->
//! generation -> maintenance), and evaluates retrieval-augmented answering
//! with a certainty classifier, decision gate, and adaptive re-retrieval.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod labeler;
pub mod providers;
pub mod rilm;
pub mod store;
