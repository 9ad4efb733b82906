//! Data ingestion, BIO handling, evaluation, configuration and reports.

pub mod config;
pub mod conll;
pub mod data;
pub mod eval;
pub mod report;

pub use config::ExperimentConfig;
pub use conll::{read_conll, repair_bio, save_conll, write_conll, ConllDocument};
pub use data::{Dataset, LabelSet, SequenceExample, OUTSIDE};
pub use eval::{evaluate, extract_entities, Counts, EntitySpan, Metrics};
pub use report::{parse_metrics_block, Report};
