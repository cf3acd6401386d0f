//! Contextual topic suggestion for open-domain conversational agents.
//!
//! Given the turns of an open-ended conversation so far, the engine predicts
//! the next topic the user is most likely to accept. Several recommenders are
//! provided — a popularity heuristic, a k-nearest-neighbor collaborative
//! filter, a linear-chain CRF sequence model, CNN/RNN window classifiers, and
//! hybrids that feed collaborative-filtering signals into the sequence
//! models — together with a seeded conversation simulator and an offline
//! evaluation harness.
//!
//! Start with the runnable examples (`cargo run --release --example ...`):
//! `generate_corpus`, `label_conversations`, `train_crf`, `train_neural`,
//! `collaborative_filtering`, `evaluate_model`, `run_ablation`,
//! `optimizers`, and `suggestion_session`. The `cts` binary wraps the same
//! pipeline behind `gen-corpus` / `train` / `eval` / `suggest` subcommands.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod eval;
pub mod features;
pub mod models;
pub mod nn;
pub mod recommenders;
pub mod simulator;
