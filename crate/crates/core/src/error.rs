use thiserror::Error;

use crate::data::DataError;
use crate::fusion::FusionError;
use crate::metrics::MetricsError;
use crate::mrcv::{ElbowError, SplitError};
use crate::preprocess::PreprocessError;
use crate::univariate::StatsError;

/// Failures while fitting a model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("design matrix is singular ({0})")]
    Singular(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Failures while scoring new samples with a fitted model.
#[derive(Debug, Error)]
pub enum PredictError {
    #[error("feature `{0}` required by the model is absent from the table")]
    MissingFeature(String),
    #[error("feature `{feature}` is missing at sample `{sample}`")]
    MissingValue { feature: String, sample: String },
}

impl From<DataError> for PredictError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::UnknownFeature(f) => PredictError::MissingFeature(f),
            DataError::MissingValue { feature, sample } => PredictError::MissingValue { feature, sample },
            other => PredictError::MissingFeature(other.to_string()),
        }
    }
}

/// Umbrella error for callers that chain several stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Elbow(#[from] ElbowError),
}
