//! Base learners and the two-level stacked forecaster.

mod bins;
mod boost;
mod forest;
mod learner;
mod logreg;
mod matrix;
mod stacking;

use std::path::PathBuf;

use thiserror::Error;

pub use boost::StumpBoost;
pub use forest::{ForestParams, RandomForest};
pub use learner::{default_learner, BaseLearner, Fitted, Learner, LearnerSpec, DEFAULT_LEARNER};
pub use logreg::LogisticRegression;
pub use matrix::FeatureMatrix;
pub use stacking::{
    argmax, assign_folds, HistoryMode, OofProvenance, Prediction, StackedForecaster, TargetPrediction, TrainConfig,
    DEFAULT_FOLDS, MODEL_FORMAT,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown learner spec {spec:?}; valid specs: {valid}")]
    UnknownLearner { spec: String, valid: &'static str },
    #[error("no training examples")]
    NoExamples,
    #[error("out-of-fold stacking needs at least 2 training conversations, found {found}")]
    TooFewConversations { found: usize },
    #[error("input has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("example has {found} targets, window expects {expected}")]
    TargetWidth { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}
