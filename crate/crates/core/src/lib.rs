//! Inference-time subspace alignment for semantic-ID generative recommenders.
//!
//! A recommender that emits hierarchical semantic IDs (SIDs) tends to lose
//! track of the user's interaction history when a long free-form reasoning
//! chain is inserted before the SID. This crate provides the tools to study
//! and correct that drift without retraining:
//!
//! * [`vocab`]: the partitioned token universe and the SID text codec.
//! * [`backend`]: the scoring interface, an exactly computable synthetic
//!   recommender and a JSON-over-HTTP client for real models.
//! * [`compress`]: reduction of a reasoning chain to one templated
//!   preference sentence.
//! * [`decode`]: constrained SID beam search and an enumeration oracle.
//! * [`align`]: the three-context bias-subtracted reranker and the CPMI
//!   score decomposition.
//! * [`diagnose`]: attention dominance metrics and PCA.
//! * [`evalx`]: datasets, Recall/NDCG, synthetic episodes and the experiment
//!   runner.
//! * [`cli`]: the `sidalign` command-line frontend.

pub mod align;
pub mod backend;
pub mod cli;
pub mod compress;
pub mod decode;
pub mod diagnose;
mod error;
pub mod evalx;
pub mod mock;
pub mod vocab;

pub use error::{Error, Result};
pub use vocab::{SemanticId, SubspaceTag, Vocabulary};
