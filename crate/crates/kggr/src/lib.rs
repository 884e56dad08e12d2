//! Knowledge-guided graph routing for multi-label image recognition.
//!
//! Statistical label co-occurrence drives two gated graph propagation
//! networks: one contextualizes per-category features produced by a
//! semantically guided attention mechanism, the other refines per-category
//! classifier weights. Training runs end-to-end on a built-in reverse-mode
//! array engine, and evaluation covers the full multi-label metric suite
//! (per-class AP, mAP, and overall/per-class P/R/F1 under top-3 and
//! 0.5-threshold protocols).

pub mod attention;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod objective;
pub mod propagation;
pub mod vocab_graph;

pub use error::{Error, Result};
