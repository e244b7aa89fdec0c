//! Black-box domain inference for hard-label classifiers.
//!
//! For each class of a target classifier, searches for the natural-language
//! description whose decoded samples the target assigns to that class while
//! staying as broad as possible.

pub mod canonical;
pub mod cli;
pub mod config;
pub mod error;
pub mod objective;
pub mod oracle;
pub mod manifest;
pub mod remote;
pub mod report;
pub mod search;
pub mod seed;
pub mod synthetic;
pub mod tree;
pub mod types;

pub use config::Config;
pub use error::{Error, Result};
pub use objective::{estimate_generality_penalty, estimate_relevance, objective_value, ObjectiveValue, RelevanceEstimate};
pub use oracle::{Budget, OracleKind, OracleSuite};
pub use search::{resume_search, run_search, SearchReport};
pub use seed::{derive_seed, Purpose, SeedPlan};
pub use tree::{NodeId, NodeStatus, Relevance, SearchNode, SearchTree};
pub use types::{ClassLabel, Description, Embedding, Sample};
