//! Session splits, accuracy metrics and the experiment grid.

mod metrics;
mod report;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Conversation, CorpusError, FeatureStore, Modality, Scheme};
use crate::features::{
    ConversationFrames, Example, FeatureError, FeatureInputs, ModalInput, Pca, PcaError, Preprocessing, WindowConfig,
};
use crate::model::{HistoryMode, LearnerSpec, ModelError, StackedForecaster, TrainConfig, DEFAULT_FOLDS};
use crate::synth::SynthCorpus;
use crate::turns::{assemble_turns, present_keys, Turn, TurnError};
use crate::par;

pub use metrics::{compute_metrics, confusion_matrix, round1, Metrics};
pub use report::{write_grid, write_report, GRID_REPORT};
pub use split::{split_sessions, Split, HOLDOUT_FRACTION};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no test session: every conversation belongs to the same session")]
    NoTestSession,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Turn(#[from] TurnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("PCA: {0}")]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("test leakage: {what} was fitted on test conversations {conv_ids:?}")]
    Leakage { what: String, conv_ids: Vec<String> },
    #[error("no unmasked targets at horizon {horizon}")]
    EmptyHorizon { horizon: usize },
    #[error("predictions and targets do not align: {0}")]
    Misaligned(String),
    #[error("unknown experiment {0:?} (expected E1..E6)")]
    UnknownExperiment(String),
    #[error("experiment {id}: {source}")]
    Experiment {
        id: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One row of the experiment grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub scheme: Scheme,
    pub use_avd: bool,
    pub w: usize,
}

impl ExperimentSpec {
    pub fn new(id: &str, scheme: Scheme, use_avd: bool, w: usize) -> Self {
        ExperimentSpec {
            id: id.to_string(),
            scheme,
            use_avd,
            w,
        }
    }

    /// E1-E3 widen the context window, E5 drops AVD and E6 merges classes.
    pub fn table() -> Vec<ExperimentSpec> {
        vec![
            ExperimentSpec::new("E1", Scheme::Six, true, 0),
            ExperimentSpec::new("E2", Scheme::Six, true, 1),
            ExperimentSpec::new("E3", Scheme::Six, true, 2),
            ExperimentSpec::new("E4", Scheme::Six, true, 3),
            ExperimentSpec::new("E5", Scheme::Six, false, 3),
            ExperimentSpec::new("E6", Scheme::Four, true, 3),
        ]
    }

    /// Parses a comma-separated list such as `"E1,E4"`.
    pub fn parse_list(s: &str) -> Result<Vec<ExperimentSpec>, EvalError> {
        s.split(',').map(|id| id.trim().parse()).collect()
    }

    pub fn window(&self, horizon: usize) -> WindowConfig {
        WindowConfig::uniform(self.w, horizon, self.use_avd, self.scheme)
    }
}

impl FromStr for ExperimentSpec {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        ExperimentSpec::table()
            .into_iter()
            .find(|e| e.id.eq_ignore_ascii_case(s))
            .ok_or_else(|| EvalError::UnknownExperiment(s.to_string()))
    }
}

impl fmt::Display for ExperimentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}-class, {}, w={})",
            self.id,
            self.scheme.class_count(),
            if self.use_avd { "AVD" } else { "no AVD" },
            self.w
        )
    }
}

/// Everything except the window that a pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub horizon: usize,
    /// Target width of the audio reduction; `None` keeps raw vectors.
    pub audio_components: Option<usize>,
    pub speaker_components: Option<usize>,
    pub learner: LearnerSpec,
    pub folds: usize,
    pub seed: u64,
    pub mode: HistoryMode,
    /// Session numbers for conversations whose id lacks the `SesNN` prefix.
    pub sessions: BTreeMap<String, u32>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            horizon: 3,
            audio_components: Some(250),
            speaker_components: Some(256),
            learner: LearnerSpec::default(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            mode: HistoryMode::TeacherForced,
            sessions: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learner: self.learner,
            folds: self.folds,
            seed: self.seed,
        }
    }
}

/// Turns plus raw modality stores, keyed by conversation.
#[derive(Debug, Clone)]
pub struct CorpusData {
    pub turns: BTreeMap<String, Vec<Turn>>,
    pub text: Option<FeatureStore>,
    pub audio: Option<FeatureStore>,
    pub speaker: Option<FeatureStore>,
}

impl CorpusData {
    /// Assembles turns and rejects feature rows that match no turn side.
    pub fn new(
        conversations: &[Conversation],
        text: Option<FeatureStore>,
        audio: Option<FeatureStore>,
        speaker: Option<FeatureStore>,
    ) -> Result<Self, EvalError> {
        let mut turns = BTreeMap::new();
        for conv in conversations {
            turns.insert(conv.conv_id.clone(), assemble_turns(conv)?);
        }
        let known = present_keys(turns.values().flatten());
        for store in [&text, &audio, &speaker].into_iter().flatten() {
            store.check_keys(&known)?;
        }
        Ok(CorpusData {
            turns,
            text,
            audio,
            speaker,
        })
    }

    pub fn from_synth(corpus: &SynthCorpus) -> Result<Self, EvalError> {
        CorpusData::new(
            &corpus.conversations,
            Some(corpus.text.clone()),
            Some(corpus.audio.clone()),
            Some(corpus.speaker.clone()),
        )
    }

    pub fn conv_ids(&self) -> impl Iterator<Item = &str> {
        self.turns.keys().map(String::as_str)
    }

    pub fn store(&self, m: Modality) -> Option<&FeatureStore> {
        match m {
            Modality::Text => self.text.as_ref(),
            Modality::Audio => self.audio.as_ref(),
            Modality::Speaker => self.speaker.as_ref(),
        }
    }

    pub fn inputs<'a>(&'a self, prep: &'a Preprocessing) -> FeatureInputs<'a> {
        FeatureInputs {
            text: self.text.as_ref().map(|store| ModalInput { store, pca: None }),
            audio: self.audio.as_ref().map(|store| ModalInput {
                store,
                pca: prep.audio_pca.as_ref(),
            }),
            speaker: self.speaker.as_ref().map(|store| ModalInput {
                store,
                pca: prep.speaker_pca.as_ref(),
            }),
        }
    }

    /// Encoded frames for the listed conversations, in the given order.
    pub fn frames(&self, ids: &[String], prep: &Preprocessing, window: &WindowConfig) -> Result<Vec<ConversationFrames>, EvalError> {
        let inputs = self.inputs(prep);
        ids.iter()
            .map(|id| {
                let turns = self
                    .turns
                    .get(id)
                    .ok_or_else(|| EvalError::Misaligned(format!("unknown conversation {id}")))?;
                Ok(ConversationFrames::new(turns, &inputs, window)?)
            })
            .collect()
    }
}

/// Fits one PCA on the raw vectors of the given conversations. The request
/// is capped at the input width and at one less than the number of rows.
pub fn fit_modality_pca(data: &CorpusData, m: Modality, train_ids: &[String], n_components: usize) -> Result<Option<Pca>, EvalError> {
    let Some(store) = data.store(m) else { return Ok(None) };
    let ids: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    let rows: Vec<&[f64]> = store
        .iter()
        .filter(|(k, _)| ids.contains(k.conv_id.as_str()))
        .map(|(_, v)| v)
        .collect();
    let n = n_components.min(store.dim).min(rows.len().saturating_sub(1)).max(1);
    if n < n_components {
        log::info!(
            "{m} PCA: capping {n_components} components at {n} (input width {}, {} training rows)",
            store.dim,
            rows.len()
        );
    }
    let used: BTreeSet<&str> = store
        .iter()
        .map(|(k, _)| k.conv_id.as_str())
        .filter(|c| ids.contains(c))
        .collect();
    Ok(Some(Pca::fit_rows(&rows, n)?.with_fitted_on(used)))
}

pub fn fit_preprocessing(data: &CorpusData, train_ids: &[String], cfg: &PipelineConfig) -> Result<Preprocessing, EvalError> {
    let fit = |m, n: Option<usize>| match n {
        Some(n) => fit_modality_pca(data, m, train_ids, n),
        None => Ok(None),
    };
    Ok(Preprocessing {
        audio_pca: fit(Modality::Audio, cfg.audio_components)?,
        speaker_pca: fit(Modality::Speaker, cfg.speaker_components)?,
    })
}

/// Fails if the model or any reduction it carries was fitted on a test
/// conversation.
pub fn check_no_leakage(model: &StackedForecaster, test_ids: &[String]) -> Result<(), EvalError> {
    let test: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
    let fitted = [
        ("stacked forecaster", Some(&model.fitted_on)),
        ("audio PCA", model.preprocessing.audio_pca.as_ref().map(|p| &p.fitted_on)),
        ("speaker PCA", model.preprocessing.speaker_pca.as_ref().map(|p| &p.fitted_on)),
    ];
    for (what, ids) in fitted {
        let Some(ids) = ids else { continue };
        let overlap: Vec<String> = ids.iter().filter(|c| test.contains(c.as_str())).cloned().collect();
        if !overlap.is_empty() {
            return Err(EvalError::Leakage {
                what: what.to_string(),
                conv_ids: overlap,
            });
        }
    }
    Ok(())
}

/// Predicted labels per target alongside the true targets, for every turn.
pub fn predict_frames(
    model: &StackedForecaster,
    frames: &[ConversationFrames],
    mode: HistoryMode,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<Option<usize>>>), EvalError> {
    let per_conv = par::map(frames.len(), |i| model.predict_conversation(&frames[i], mode));
    let mut predicted = Vec::new();
    let mut targets = Vec::new();
    for (f, preds) in frames.iter().zip(per_conv) {
        for (t, p) in preds?.into_iter().enumerate() {
            predicted.push(p.targets.iter().map(|tp| tp.label).collect());
            targets.push(f.targets(t));
        }
    }
    Ok((predicted, targets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: Option<ExperimentSpec>,
    pub window: WindowConfig,
    pub learner: LearnerSpec,
    pub seed: u64,
    pub mode: HistoryMode,
    pub class_order: Vec<String>,
    pub n_train_conversations: usize,
    pub n_validation_conversations: usize,
    pub n_test_conversations: usize,
    pub n_test_examples: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Overall accuracy on the validation holdout.
    pub acc_validation: Option<f64>,
}

/// Scores a trained model on test frames and, when given, validation frames.
pub fn evaluate(
    model: &StackedForecaster,
    test: &[ConversationFrames],
    validation: &[ConversationFrames],
    mode: HistoryMode,
) -> Result<EvalReport, EvalError> {
    let (predicted, targets) = predict_frames(model, test, mode)?;
    let metrics = compute_metrics(&predicted, &targets, &model.window)?;
    let acc_validation = if validation.is_empty() {
        None
    } else {
        let (p, t) = predict_frames(model, validation, mode)?;
        match compute_metrics(&p, &t, &model.window) {
            Ok(m) => Some(m.acc_overall),
            Err(e) => {
                log::warn!("validation accuracy unavailable: {e}");
                None
            }
        }
    };
    Ok(EvalReport {
        experiment: None,
        window: model.window,
        learner: model.train.learner,
        seed: model.train.seed,
        mode,
        class_order: model.class_order.clone(),
        n_train_conversations: model.fitted_on.len(),
        n_validation_conversations: validation.len(),
        n_test_conversations: test.len(),
        n_test_examples: targets.len(),
        metrics,
        acc_validation,
    })
}

/// Scores prebuilt teacher-forced examples. Rejects examples from
/// conversations the model was fitted on.
pub fn evaluate_examples(model: &StackedForecaster, examples: &[Example]) -> Result<EvalReport, EvalError> {
    let convs: Vec<String> = examples
        .iter()
        .map(|e| e.conv_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    check_no_leakage(model, &convs)?;
    let xs: Vec<&[f64]> = examples.iter().map(|e| e.x.as_slice()).collect();
    let predicted: Vec<Vec<usize>> = model
        .predict_many(&xs)?
        .into_iter()
        .map(|p| p.targets.iter().map(|t| t.label).collect())
        .collect();
    let targets: Vec<Vec<Option<usize>>> = examples.iter().map(|e| e.targets.clone()).collect();
    let metrics = compute_metrics(&predicted, &targets, &model.window)?;
    Ok(EvalReport {
        experiment: None,
        window: model.window,
        learner: model.train.learner,
        seed: model.train.seed,
        mode: HistoryMode::TeacherForced,
        class_order: model.class_order.clone(),
        n_train_conversations: model.fitted_on.len(),
        n_validation_conversations: 0,
        n_test_conversations: convs.len(),
        n_test_examples: examples.len(),
        metrics,
        acc_validation: None,
    })
}

/// A trained model together with the split it came from.
#[derive(Debug, Clone)]
pub struct Trained {
    pub split: Split,
    pub model: StackedForecaster,
}

/// Splits, reduces and trains for one window.
pub fn train_pipeline(data: &CorpusData, window: &WindowConfig, cfg: &PipelineConfig) -> Result<Trained, EvalError> {
    let split = split_sessions(data.conv_ids(), &cfg.sessions, cfg.seed)?;
    let prep = fit_preprocessing(data, &split.train, cfg)?;
    let examples: Vec<Example> = data
        .frames(&split.train, &prep, window)?
        .iter()
        .flat_map(ConversationFrames::examples)
        .collect();
    let mut model = StackedForecaster::train(&examples, window, &cfg.train_config())?;
    model.preprocessing = prep;
    Ok(Trained { split, model })
}

/// Train on the training sessions, then score the held-out session.
pub fn run_experiment(data: &CorpusData, spec: &ExperimentSpec, cfg: &PipelineConfig) -> Result<EvalReport, EvalError> {
    let window = spec.window(cfg.horizon);
    let Trained { split, model } = train_pipeline(data, &window, cfg)?;
    check_no_leakage(&model, &split.test)?;
    let prep = &model.preprocessing;
    let test = data.frames(&split.test, prep, &window)?;
    let validation = data.frames(&split.validation, prep, &window)?;
    let mut report = evaluate(&model, &test, &validation, cfg.mode)?;
    report.experiment = Some(spec.clone());
    Ok(report)
}

/// Runs every spec, in parallel, and returns reports in spec order.
pub fn run_grid(data: &CorpusData, specs: &[ExperimentSpec], cfg: &PipelineConfig) -> Result<Vec<EvalReport>, EvalError> {
    par::map(specs.len(), |i| {
        run_experiment(data, &specs[i], cfg).map_err(|e| EvalError::Experiment {
            id: specs[i].id.clone(),
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect()
}
