//! File formats: dataset ingestion and deterministic output writers.

pub mod ingest;
pub mod output;
