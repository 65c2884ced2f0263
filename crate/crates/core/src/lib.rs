//! Set-level membership inference audits against black-box vision-language
//! model oracles.
//!
//! The pieces, bottom up: [`similarity`] scores responses, [`statistics`]
//! turns scores into p-values and AUCs, [`classifier`] is the shadow
//! attack's network, [`oracle`] queries (and caches) real or simulated
//! models, [`attacks`] implements the inference procedures and [`harness`]
//! runs them over many sets and writes reports.

pub mod attacks;
pub mod classifier;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod similarity;
pub mod statistics;
pub mod transport;

pub use attacks::{AttackContext, AttackKind, SampleSet, Verdict};
pub use classifier::{ClassifierModel, FeatureVector, Hyperparameters};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentReport};
pub use oracle::{QueryEngine, Sample};
pub use similarity::{Scorer, SimilarityMetric};
pub use statistics::ScoreArray;
