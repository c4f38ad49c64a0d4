//! Learning folksonomies: many shallow personal hierarchies ("saplings") are
//! merged into deeper shared taxonomies by clustering same-named nodes with
//! affinity propagation, optionally under a single-parent constraint that
//! keeps the merged structure a tree.
//!
//! The pipeline is: [`sapling`] ingestion and filtering, [`simfn`] blocked
//! similarities, [`appc`] / [`rap`] clustering, [`folksonomy`] assembly, and
//! [`metrics`] against a reference. [`synthgen`] produces synthetic corpora
//! with known ground truth plus an exhaustive oracle for tiny instances;
//! [`pipeline`] wires everything into reproducible runs and [`cli`] exposes
//! them as a command-line tool.

pub mod appc;
pub mod cli;
pub mod config;
pub mod error;
pub mod folksonomy;
pub mod metrics;
pub mod pipeline;
pub mod rap;
pub mod sapling;
pub mod simfn;
pub mod stem;
pub mod synthgen;

pub use error::{Error, Result};
