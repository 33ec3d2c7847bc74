//! Two-modality binary classification toolkit: robust preprocessing,
//! rank-based screening, logistic and random-forest models trained under
//! repeated random cross-validation, threshold estimation and late fusion.

pub mod cli;
pub mod data;
pub mod error;
pub mod forest;
pub mod fusion;
pub mod logreg;
pub mod metrics;
pub mod mrcv;
pub mod normal;
pub mod preprocess;
pub mod rank;
pub mod report;
pub mod synth;
pub mod univariate;

pub use data::{ClassLabel, DataError, FeatureTable, Schema};
pub use error::{Error, ModelError, PredictError};
pub use forest::{Forest, ForestParams, ImportanceReport};
pub use fusion::{FusionRule, fuse_pair};
pub use logreg::FittedLogReg;
pub use metrics::{Confusion, MetricsRow};
pub use mrcv::{FeatureRanking, FoldOutcome};
