//! Two-level stacking over per-target heads.
//!
//! Level 1 has one head per `(slot, horizon)` target trained on `x`. Level 2
//! has one head per target trained on `x` followed by every target's level-1
//! probabilities. The level-1 probabilities used to train level 2 are
//! out-of-fold: folds partition conversations, and a row's stacked features
//! come from models that never saw its conversation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::learner::{BaseLearner, Learner, LearnerSpec};
use super::{FeatureMatrix, ModelError};
use crate::features::{ConversationFrames, Example, Preprocessing, WindowConfig};
use crate::{par, seed};

pub const MODEL_FORMAT: &str = "erfc-model/1";
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learner: LearnerSpec,
    pub folds: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(learner: LearnerSpec, seed: u64) -> Self {
        TrainConfig {
            learner,
            folds: DEFAULT_FOLDS,
            seed,
        }
    }
}

/// Which level-1 models produced each level-2 training row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OofProvenance {
    /// Conversations present in the training rows of each fold's models.
    pub fold_trained_on: Vec<BTreeSet<String>>,
    /// `(conv_id, turn, fold)` for every level-2 training row, where `fold`
    /// names the models that produced the row's stacked features.
    pub rows: Vec<(String, usize, usize)>,
}

impl OofProvenance {
    /// Level-2 rows whose stacked features came from a model trained on the
    /// row's own conversation, or from a fold that does not exist. Empty
    /// when stacking is clean.
    pub fn violations(&self) -> Vec<(String, usize)> {
        self.rows
            .iter()
            .filter(|(c, _, f)| self.fold_trained_on.get(*f).is_none_or(|s| s.contains(c)))
            .map(|(c, t, _)| (c.clone(), *t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPrediction {
    pub slot: u8,
    pub horizon: usize,
    pub proba: Vec<f64>,
    pub label: usize,
}

/// Final distributions for every target, in target-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub targets: Vec<TargetPrediction>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// How past emotions enter the input at inference time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryMode {
    /// Ground-truth past labels.
    #[default]
    TeacherForced,
    /// The model's own current-turn predictions for past turns.
    Autoregressive,
}

impl FromStr for HistoryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "teacher-forced" => Ok(HistoryMode::TeacherForced),
            "autoregressive" => Ok(HistoryMode::Autoregressive),
            _ => Err(format!("unknown history mode {s:?} (expected teacher-forced or autoregressive)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedForecaster {
    pub format: String,
    pub window: WindowConfig,
    pub x_dim: usize,
    pub class_order: Vec<String>,
    pub train: TrainConfig,
    pub oof_folds: usize,
    pub fold_assignment: BTreeMap<String, usize>,
    /// Every conversation that contributed a training row.
    pub fitted_on: BTreeSet<String>,
    pub provenance: OofProvenance,
    /// Reductions the training inputs went through; carried so the artifact
    /// can encode new data on its own.
    pub preprocessing: Preprocessing,
    pub level1: Vec<Learner>,
    pub level2: Vec<Learner>,
}

/// Deals conversations round-robin into `k` folds after ordering them by a
/// seeded hash, so assignment depends only on the id set and the seed.
pub fn assign_folds<'a>(conv_ids: impl IntoIterator<Item = &'a str>, k: usize, run_seed: u64) -> BTreeMap<String, usize> {
    let salt = seed::derive(run_seed, &[seed::stream::FOLDS]);
    let mut ids: Vec<(u64, &str)> = conv_ids
        .into_iter()
        .map(|c| (seed::stable_hash(c, salt), c))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .enumerate()
        .map(|(i, (_, c))| (c.to_string(), i % k))
        .collect()
}

impl StackedForecaster {
    pub fn train(examples: &[Example], window: &WindowConfig, cfg: &TrainConfig) -> Result<Self, ModelError> {
        let first = examples.first().ok_or(ModelError::NoExamples)?;
        let x_dim = first.x.len();
        let n_targets = window.n_targets();
        let n_classes = window.n_classes();
        for ex in examples {
            if ex.x.len() != x_dim {
                return Err(ModelError::DimensionMismatch {
                    expected: x_dim,
                    found: ex.x.len(),
                });
            }
            if ex.targets.len() != n_targets {
                return Err(ModelError::TargetWidth {
                    expected: n_targets,
                    found: ex.targets.len(),
                });
            }
        }

        // Canonical order makes training independent of input order.
        let mut order: Vec<&Example> = examples.iter().collect();
        order.sort_by(|a, b| (&a.conv_id, a.turn).cmp(&(&b.conv_id, b.turn)));
        let convs: BTreeSet<String> = order.iter().map(|e| e.conv_id.clone()).collect();
        if convs.len() < 2 {
            return Err(ModelError::TooFewConversations { found: convs.len() });
        }
        let k = cfg.folds.clamp(2, convs.len());
        let fold_assignment = assign_folds(convs.iter().map(String::as_str), k, cfg.seed);
        let fold: Vec<usize> = order.iter().map(|e| fold_assignment[&e.conv_id]).collect();
        let x = FeatureMatrix::from_rows(x_dim, order.iter().map(|e| e.x.as_slice()));
        let n = order.len();

        let fit = |rows: &[usize], data: &FeatureMatrix, target: usize, path: &[u64]| {
            let y: Vec<usize> = rows.iter().map(|&r| order[r].targets[target].expect("unmasked")).collect();
            let mut l = Learner::new(cfg.learner);
            l.fit(&data.select(rows), &y, n_classes, seed::derive(cfg.seed, path));
            l
        };
        let labelled = |target: usize, keep: &dyn Fn(usize) -> bool| -> Vec<usize> {
            (0..n).filter(|&r| keep(r) && order[r].targets[target].is_some()).collect()
        };

        // Out-of-fold level-1 probabilities, one task per (target, fold).
        let oof = par::map(n_targets * k, |task| {
            let (target, f) = (task / k, task % k);
            let rows = labelled(target, &|r| fold[r] != f);
            let trained_on: BTreeSet<String> = rows.iter().map(|&r| order[r].conv_id.clone()).collect();
            let head = fit(&rows, &x, target, &[seed::stream::LEVEL1, target as u64, f as u64]);
            let held: Vec<(usize, Vec<f64>)> = (0..n)
                .filter(|&r| fold[r] == f)
                .map(|r| (r, head.predict_proba_row(x.row(r))))
                .collect();
            (trained_on, held)
        });
        let stack_width = n_targets * n_classes;
        let mut stacked = vec![0.0; n * stack_width];
        let mut fold_trained_on = vec![BTreeSet::new(); k];
        for (task, (trained_on, held)) in oof.into_iter().enumerate() {
            let (target, f) = (task / k, task % k);
            fold_trained_on[f].extend(trained_on);
            for (r, p) in held {
                let at = r * stack_width + target * n_classes;
                stacked[at..at + n_classes].copy_from_slice(&p);
            }
        }

        let level1 = par::map(n_targets, |target| {
            let rows = labelled(target, &|_| true);
            let head = fit(&rows, &x, target, &[seed::stream::LEVEL1, target as u64, k as u64]);
            if head.is_constant() {
                log::warn!("level-1 head for target {target} saw fewer than two classes; using a constant head");
            }
            head
        });

        let mut z = FeatureMatrix::new(x_dim + stack_width);
        let mut buf = Vec::with_capacity(x_dim + stack_width);
        for r in 0..n {
            buf.clear();
            buf.extend_from_slice(x.row(r));
            buf.extend_from_slice(&stacked[r * stack_width..(r + 1) * stack_width]);
            z.push_row(&buf);
        }
        let level2 = par::map(n_targets, |target| {
            let rows = labelled(target, &|_| true);
            fit(&rows, &z, target, &[seed::stream::LEVEL2, target as u64])
        });

        let provenance = OofProvenance {
            fold_trained_on,
            rows: (0..n).map(|r| (order[r].conv_id.clone(), order[r].turn, fold[r])).collect(),
        };
        Ok(StackedForecaster {
            format: MODEL_FORMAT.to_string(),
            window: *window,
            x_dim,
            class_order: window.scheme.class_names(),
            train: *cfg,
            oof_folds: k,
            fold_assignment,
            fitted_on: convs,
            provenance,
            preprocessing: Preprocessing::default(),
            level1,
            level2,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_order.len()
    }

    /// Width of the level-2 input: `dim(x) + 2 (k + 1) C`.
    pub fn level2_dim(&self) -> usize {
        self.x_dim + self.level1.len() * self.n_classes()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() == self.x_dim {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.x_dim,
                found: x.len(),
            })
        }
    }

    /// `x` followed by every level-1 head's probabilities.
    pub fn augment(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        let mut z = Vec::with_capacity(self.level2_dim());
        z.extend_from_slice(x);
        for head in &self.level1 {
            z.extend(head.predict_proba_row(x));
        }
        Ok(z)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        let z = self.augment(x)?;
        let targets = self
            .level2
            .iter()
            .enumerate()
            .map(|(i, head)| {
                let (slot, horizon) = self.window.target_of(i);
                let proba = head.predict_proba_row(&z);
                TargetPrediction {
                    slot,
                    horizon,
                    label: argmax(&proba),
                    proba,
                }
            })
            .collect();
        Ok(Prediction { targets })
    }

    pub fn predict_many(&self, xs: &[&[f64]]) -> Result<Vec<Prediction>, ModelError> {
        par::map(xs.len(), |i| self.predict(xs[i])).into_iter().collect()
    }

    /// Predicts every turn of a conversation. Autoregressive mode feeds the
    /// model's own current-turn labels back as emotion history; observed AVD
    /// for those turns is kept.
    pub fn predict_conversation(
        &self,
        frames: &ConversationFrames,
        mode: HistoryMode,
    ) -> Result<Vec<Prediction>, ModelError> {
        match mode {
            HistoryMode::TeacherForced => {
                let xs: Vec<Vec<f64>> = (0..frames.len()).map(|t| frames.features(t)).collect();
                self.predict_many(&xs.iter().map(Vec::as_slice).collect::<Vec<_>>())
            }
            HistoryMode::Autoregressive => {
                let mut out: Vec<Prediction> = Vec::with_capacity(frames.len());
                for t in 0..frames.len() {
                    let x = frames.features_with(t, |j, slot| {
                        frames
                            .present(j, slot)
                            .then(|| out[j].targets[self.window.target_index(slot, 0)].label)
                    });
                    out.push(self.predict(&x)?);
                }
                Ok(out)
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let io = |source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer(&mut f, self).map_err(|e| ModelError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        f.write_all(b"\n").and_then(|_| f.flush()).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let format_err = |message: String| ModelError::Format {
            path: path.to_path_buf(),
            message,
        };
        let file = File::open(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: StackedForecaster =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| format_err(e.to_string()))?;
        if model.format != MODEL_FORMAT {
            return Err(format_err(format!("unsupported model format {:?}", model.format)));
        }
        if model.level1.len() != model.window.n_targets() || model.level2.len() != model.window.n_targets() {
            return Err(format_err("head count does not match the window config".into()));
        }
        if let Some((conv, turn)) = model.provenance.violations().into_iter().next() {
            return Err(format_err(format!("level-2 row {conv} turn {turn} was stacked from a model trained on it")));
        }
        Ok(model)
    }
}
