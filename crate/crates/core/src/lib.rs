//! Deterministic graded clause–rule retrieval and fuzzy compliance triage.
//!
//! The engine consumes frozen base embeddings for rules (queries) and
//! clauses, trains a dual projection with a listwise graded loss, fits a
//! scalar calibration head and a three-state fuzzy head on the resulting
//! cosine scores, and tunes a `(low, high)` review band that maximizes
//! automatic coverage under an auto-only error ceiling. Every stage is
//! seeded and writes a canonical, digest-stamped manifest.
//!
//! Stage layout:
//!
//! | module | role |
//! |--------|------|
//! | [`data`] | schemas, `EMB1` embedding files, dataset parsing, synthetic corpora |
//! | [`retrieval`] | projection, cosine scoring, top-k ranking |
//! | [`rank`] | listwise graded-softmax training of the projection |
//! | [`classifier`] | calibration and fuzzy-gating heads |
//! | [`triage`] | three-band decision rule and constrained threshold search |
//! | [`metrics`] | NDCG, P4@5, precision/recall/F1, AUC, ECE |
//! | [`audit`] | seeded PRNG, config loading, manifests, audit trails, seed sweeps |
//! | [`pipeline`] | stage orchestration shared by the CLI and the tests |

// `!(x > 0.0)` style checks are kept so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod rank;
pub mod retrieval;
pub mod triage;

pub use error::{Error, Result};
