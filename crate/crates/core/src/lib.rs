//! Cross-domain transfer for BLSTM-CRF named-entity taggers.
//!
//! A source-domain tagger is adapted to a target domain through a fixed
//! word-embedding projection learned from a pivot lexicon, a sentence-level
//! BLSTM pre-encoder, and an output BLSTM re-encoder feeding a new CRF. The
//! INIT and MULT transfer baselines are provided for comparison.

pub mod adaptation;
pub mod base_model;
pub mod baselines;
pub mod corpus_stats;
pub mod embeddings;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use nerxfer_autograd as autograd;
