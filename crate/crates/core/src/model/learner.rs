use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bins::DEFAULT_MAX_BINS;
use super::boost::StumpBoost;
use super::forest::{ForestParams, RandomForest};
use super::logreg::LogisticRegression;
use super::{FeatureMatrix, ModelError};

pub const DEFAULT_LEARNER: &str = "rf:100:12";
const VALID_SPECS: &str = "rf:<n_trees>:<max_depth>, logreg:<l2>, stump-boost:<rounds>";

/// A probabilistic classifier trained on integer labels `0..n_classes`.
pub trait BaseLearner {
    fn id(&self) -> String;

    /// Same `(x, y, seed)` must give the same fitted state.
    fn fit(&mut self, x: &FeatureMatrix, y: &[usize], n_classes: usize, seed: u64);

    /// Non-negative entries summing to one.
    fn predict_proba_row(&self, x: &[f64]) -> Vec<f64>;

    fn predict_proba(&self, x: &FeatureMatrix) -> Vec<Vec<f64>> {
        x.rows().take(x.n_rows()).map(|r| self.predict_proba_row(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LearnerSpec {
    Forest { n_trees: usize, max_depth: usize },
    LogReg { l2: f64 },
    StumpBoost { rounds: usize },
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::Forest {
            n_trees: 100,
            max_depth: 12,
        }
    }
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerSpec::Forest { n_trees, max_depth } => write!(f, "rf:{n_trees}:{max_depth}"),
            LearnerSpec::LogReg { l2 } => write!(f, "logreg:{l2:?}"),
            LearnerSpec::StumpBoost { rounds } => write!(f, "stump-boost:{rounds}"),
        }
    }
}

impl FromStr for LearnerSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::UnknownLearner {
            spec: s.to_string(),
            valid: VALID_SPECS,
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        let spec = match parts.as_slice() {
            ["rf", n, d] => LearnerSpec::Forest {
                n_trees: n.parse().map_err(|_| bad())?,
                max_depth: d.parse().map_err(|_| bad())?,
            },
            ["logreg", l2] => LearnerSpec::LogReg {
                l2: l2.parse().map_err(|_| bad())?,
            },
            ["stump-boost", r] => LearnerSpec::StumpBoost {
                rounds: r.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        match spec {
            LearnerSpec::Forest { n_trees: 0, .. } | LearnerSpec::StumpBoost { rounds: 0 } => Err(bad()),
            LearnerSpec::LogReg { l2 } if !(l2.is_finite() && l2 >= 0.0) => Err(bad()),
            _ => Ok(spec),
        }
    }
}

impl TryFrom<String> for LearnerSpec {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, ModelError> {
        s.parse()
    }
}

impl From<LearnerSpec> for String {
    fn from(s: LearnerSpec) -> String {
        s.to_string()
    }
}

/// Fitted parameters of a [`Learner`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fitted {
    Forest(RandomForest),
    LogReg(LogisticRegression),
    StumpBoost(StumpBoost),
    /// Used when training data holds fewer than two classes.
    Constant(Vec<f64>),
}

/// A configured learner, fitted or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub spec: LearnerSpec,
    pub fitted: Option<Fitted>,
}

impl Learner {
    pub fn new(spec: LearnerSpec) -> Self {
        Learner { spec, fitted: None }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.fitted, Some(Fitted::Constant(_)))
    }
}

/// Parses a learner spec such as `"rf:100:12"`, `"logreg:1.0"` or
/// `"stump-boost:50"`.
pub fn default_learner(spec: &str) -> Result<Learner, ModelError> {
    Ok(Learner::new(spec.parse()?))
}

impl BaseLearner for Learner {
    fn id(&self) -> String {
        self.spec.to_string()
    }

    fn fit(&mut self, x: &FeatureMatrix, y: &[usize], n_classes: usize, seed: u64) {
        let mut seen = vec![false; n_classes];
        y.iter().for_each(|&l| seen[l] = true);
        let fitted = match (seen.iter().filter(|&&s| s).count(), self.spec) {
            (0, _) => Fitted::Constant(vec![1.0 / n_classes as f64; n_classes]),
            (1, _) => {
                let mut p = vec![0.0; n_classes];
                p[y[0]] = 1.0;
                Fitted::Constant(p)
            }
            (_, LearnerSpec::Forest { n_trees, max_depth }) => {
                let params = ForestParams {
                    n_trees,
                    max_depth,
                    max_bins: DEFAULT_MAX_BINS,
                };
                Fitted::Forest(RandomForest::fit(x, y, n_classes, &params, seed))
            }
            (_, LearnerSpec::LogReg { l2 }) => Fitted::LogReg(LogisticRegression::fit(x, y, n_classes, l2)),
            (_, LearnerSpec::StumpBoost { rounds }) => Fitted::StumpBoost(StumpBoost::fit(x, y, n_classes, rounds)),
        };
        self.fitted = Some(fitted);
    }

    fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        match self.fitted.as_ref().expect("predict called before fit") {
            Fitted::Forest(m) => m.predict_proba(x),
            Fitted::LogReg(m) => m.predict_proba(x),
            Fitted::StumpBoost(m) => m.predict_proba(x),
            Fitted::Constant(p) => p.clone(),
        }
    }
}
