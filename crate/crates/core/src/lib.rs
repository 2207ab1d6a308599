//! Offensive-language detection toolkit for tweets.
//!
//! * [`ingest`] loads OLID-style TSV files.
//! * [`preprocess`] tokenizes and normalizes tweets.
//! * [`embeddings`] maps words to pretrained vectors and fixed-length index sequences.
//! * [`nncore`] is a small CPU neural-network library with exact gradients.
//! * [`models`] builds the three offensive/not-offensive classifiers and their ensemble.
//! * [`heuristics`] is the rule engine for targeted vs. untargeted offense.
//! * [`eval`] computes confusion matrices, macro-F1 and baselines.

pub mod embeddings;
pub mod eval;
pub mod heuristics;
pub mod ingest;
pub mod models;
pub mod nncore;
pub mod preprocess;
