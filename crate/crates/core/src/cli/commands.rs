use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use serde::Serialize;

use super::{CliError, RunConfig};
use crate::corpus::{load_features, load_utterances, Modality, Scheme};
use crate::eval::{
    self, check_no_leakage, evaluate_examples, split_sessions, write_grid, write_report, CorpusData, ExperimentSpec,
    PipelineConfig, Split,
};
use crate::features::{load_dataset, save_dataset, ConversationFrames, Dataset, Pca, Preprocessing, WindowConfig};
use crate::model::{HistoryMode, LearnerSpec, StackedForecaster, TrainConfig, DEFAULT_FOLDS};
use crate::synth::{self, Conditioning, Preset, MIN_TRIALS};
use crate::turns::present_keys;

const SPLIT_FILE: &str = "split.json";
const MODEL_FILE: &str = "model.json";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| usage(format!("missing required flag --{flag}")))
}

fn parse<T: FromStr>(v: &Option<String>, flag: &str) -> Result<Option<T>, CliError>
where
    T::Err: Display,
{
    v.as_deref()
        .map(|s| s.parse::<T>().map_err(|e| usage(format!("--{flag} {s:?}: {e}"))))
        .transpose()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_vec_pretty(v)?;
    body.push(b'\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display())).map_err(CliError::Validation)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(CliError::Validation)?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(CliError::Validation)?)
}

/// Starts a stage: checks `--out` and records the resolved config there.
fn begin(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    cfg.write_resolved(&out)?;
    Ok(out)
}

fn learner(cfg: &RunConfig) -> Result<LearnerSpec, CliError> {
    Ok(parse(&cfg.learner, "learner")?.unwrap_or_default())
}

fn mode(cfg: &RunConfig) -> Result<HistoryMode, CliError> {
    Ok(parse(&cfg.mode, "mode")?.unwrap_or(HistoryMode::TeacherForced))
}

fn components(v: Option<usize>, default: usize) -> Option<usize> {
    match v.unwrap_or(default) {
        0 => None,
        n => Some(n),
    }
}

fn pipeline(cfg: &RunConfig) -> Result<PipelineConfig, CliError> {
    let d = PipelineConfig::default();
    Ok(PipelineConfig {
        horizon: cfg.horizon.unwrap_or(d.horizon),
        audio_components: components(cfg.audio_components, d.audio_components.unwrap_or(0)),
        speaker_components: components(cfg.speaker_components, d.speaker_components.unwrap_or(0)),
        learner: learner(cfg)?,
        folds: cfg.folds.unwrap_or(DEFAULT_FOLDS),
        seed: cfg.seed.unwrap_or(0),
        mode: mode(cfg)?,
        sessions: cfg.sessions.clone(),
    })
}

fn window(cfg: &RunConfig) -> Result<WindowConfig, CliError> {
    let w = cfg.w.unwrap_or(3);
    let scheme: Scheme = parse(&cfg.scheme, "scheme")?.unwrap_or(Scheme::Six);
    let mut win = WindowConfig::uniform(w, cfg.horizon.unwrap_or(3), cfg.use_avd.unwrap_or(true), scheme);
    win.w_text = cfg.w_text.unwrap_or(w);
    win.w_audio = cfg.w_audio.unwrap_or(w);
    win.w_speaker = cfg.w_speaker.unwrap_or(w);
    win.w_emotion = cfg.w_emotion.unwrap_or(w);
    Ok(win)
}

/// Loads utterances and whichever feature files exist. Explicit path flags
/// win over files found in `--corpus`.
fn load_corpus(cfg: &RunConfig) -> Result<CorpusData, CliError> {
    let dir = cfg.corpus.as_deref();
    let pick = |flag: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
        flag.clone().or_else(|| dir.map(|d| d.join(name)).filter(|p| p.exists()))
    };
    let utterances = pick(&cfg.utterances, "utterances.jsonl")
        .ok_or_else(|| usage("missing required flag --corpus (or --utterances)"))?;
    let conversations = load_utterances(&utterances)?;
    let turns: Vec<_> = conversations
        .iter()
        .map(crate::turns::assemble_turns)
        .collect::<Result<Vec<_>, _>>()?;
    let known = present_keys(turns.iter().flatten());
    let load = |flag: &Option<PathBuf>, m: Modality| -> Result<_, CliError> {
        match pick(flag, &format!("{m}.csv")) {
            Some(p) => Ok(Some(load_features(&p, m, Some(&known))?)),
            None => Ok(None),
        }
    };
    let text = load(&cfg.text, Modality::Text)?;
    let audio = load(&cfg.audio, Modality::Audio)?;
    let speaker = load(&cfg.speaker, Modality::Speaker)?;
    log::info!("loaded {} conversations from {}", conversations.len(), utterances.display());
    Ok(CorpusData::new(&conversations, text, audio, speaker)?)
}

pub fn synth(cfg: RunConfig) -> Result<(), CliError> {
    let out = begin(&cfg)?;
    let seed = cfg.seed.unwrap_or(0);
    let mut sc = match &cfg.synth {
        Some(s) => s.clone(),
        None => parse::<Preset>(&cfg.preset, "preset")?.unwrap_or(Preset::Benchmark).config(seed),
    };
    sc.seed = seed;
    if let Some(n) = cfg.n_conversations {
        sc.n_conversations = n;
    }
    if let Some(t) = cfg.turns_mean {
        sc.turns_mean = t;
    }
    let corpus = synth::generate(&sc)?;
    synth::write_corpus(&out, &corpus)?;
    log::info!("wrote {} conversations to {}", corpus.conversations.len(), out.display());
    if cfg.oracle.unwrap_or(false) {
        let k = cfg.horizon.unwrap_or(3);
        let curves = [
            synth::current_labels_oracle(&sc, k)?,
            synth::bayes_oracle(&sc, k, Conditioning::FullHistory, MIN_TRIALS)?,
            synth::bayes_oracle(&sc, k, Conditioning::EmissionsOnly, MIN_TRIALS)?,
        ];
        write_json(&out.join("oracle.json"), &curves)?;
    }
    Ok(())
}

pub fn fit_pca(cfg: RunConfig) -> Result<(), CliError> {
    let out = begin(&cfg)?;
    let data = load_corpus(&cfg)?;
    let p = pipeline(&cfg)?;
    let split = split_sessions(data.conv_ids(), &p.sessions, p.seed)?;
    let prep = eval::fit_preprocessing(&data, &split.train, &p)?;
    for (m, pca) in [(Modality::Audio, &prep.audio_pca), (Modality::Speaker, &prep.speaker_pca)] {
        if let Some(pca) = pca {
            log::info!(
                "{m} PCA: {} -> {} components, {:.3} of variance",
                pca.input_dim(),
                pca.n_components(),
                pca.explained_variance_ratio()
            );
            write_json(&out.join(format!("{m}_pca.json")), pca)?;
        }
    }
    write_json(&out.join(SPLIT_FILE), &split)
}

pub fn build(cfg: RunConfig) -> Result<(), CliError> {
    let out = begin(&cfg)?;
    let data = load_corpus(&cfg)?;
    let win = window(&cfg)?;
    let mut prep = Preprocessing::default();
    let mut split: Option<Split> = None;
    if let Some(dir) = &cfg.pca_dir {
        let get = |m: Modality| -> Result<Option<Pca>, CliError> {
            let p = dir.join(format!("{m}_pca.json"));
            p.exists().then(|| read_json(&p)).transpose()
        };
        prep.audio_pca = get(Modality::Audio)?;
        prep.speaker_pca = get(Modality::Speaker)?;
        let p = dir.join(SPLIT_FILE);
        if p.exists() {
            split = Some(read_json(&p)?);
        }
    }
    let part = cfg.split.as_deref().unwrap_or("all");
    let ids: Vec<String> = if part == "all" {
        data.conv_ids().map(str::to_string).collect()
    } else {
        let s = match split {
            Some(s) => s,
            None => split_sessions(data.conv_ids(), &cfg.sessions, cfg.seed.unwrap_or(0))?,
        };
        match part {
            "train" => s.train,
            "validation" => s.validation,
            "test" => s.test,
            other => return Err(usage(format!("--split {other:?}: expected all, train, validation or test"))),
        }
    };
    let frames = data.frames(&ids, &prep, &win)?;
    let dims = data.inputs(&prep).dims();
    let examples = frames.iter().flat_map(ConversationFrames::examples).collect();
    let ds = Dataset::new(win, dims, prep, examples);
    log::info!("{} examples of width {} from {} conversations", ds.examples.len(), ds.meta.x_dim, ids.len());
    save_dataset(&out, &ds)?;
    Ok(())
}

pub fn train(cfg: RunConfig) -> Result<(), CliError> {
    let out = begin(&cfg)?;
    let ds = load_dataset(required(&cfg.dataset, "dataset")?)?;
    let tc = TrainConfig {
        learner: learner(&cfg)?,
        folds: cfg.folds.unwrap_or(DEFAULT_FOLDS),
        seed: cfg.seed.unwrap_or(0),
    };
    let mut model = StackedForecaster::train(&ds.examples, &ds.meta.window, &tc)?;
    model.preprocessing = ds.meta.preprocessing;
    let path = out.join(MODEL_FILE);
    model.save(&path)?;
    log::info!("trained on {} conversations, saved {}", model.fitted_on.len(), path.display());
    Ok(())
}

pub fn evaluate(cfg: RunConfig) -> Result<(), CliError> {
    let out = begin(&cfg)?;
    let model = StackedForecaster::load(required(&cfg.model, "model")?)?;
    let mode = mode(&cfg)?;
    let report = match &cfg.dataset {
        Some(dir) => {
            if mode != HistoryMode::TeacherForced {
                return Err(usage("--mode autoregressive needs --corpus; datasets hold teacher-forced examples"));
            }
            let ds = load_dataset(dir)?;
            if ds.meta.window != model.window {
                return Err(CliError::Validation(anyhow::anyhow!(
                    "{}: dataset window does not match the model's",
                    dir.display()
                )));
            }
            evaluate_examples(&model, &ds.examples)?
        }
        None => {
            let data = load_corpus(&cfg)?;
            let split = split_sessions(data.conv_ids(), &cfg.sessions, model.train.seed)?;
            check_no_leakage(&model, &split.test)?;
            let prep = &model.preprocessing;
            let test = data.frames(&split.test, prep, &model.window)?;
            let validation = data.frames(&split.validation, prep, &model.window)?;
            eval::evaluate(&model, &test, &validation, mode)?
        }
    };
    log::info!("overall accuracy {:.1}", report.metrics.acc_overall);
    write_report(&out, &report)?;
    Ok(())
}

pub fn grid(cfg: RunConfig) -> Result<(), CliError> {
    let out = begin(&cfg)?;
    let p = pipeline(&cfg)?;
    let specs = match &cfg.specs {
        Some(s) => ExperimentSpec::parse_list(s).map_err(|e| usage(format!("--specs {s:?}: {e}")))?,
        None => ExperimentSpec::table(),
    };
    let data = if cfg.corpus.is_some() || cfg.utterances.is_some() {
        load_corpus(&cfg)?
    } else {
        let mut sc = match &cfg.synth {
            Some(s) => s.clone(),
            None => parse::<Preset>(&cfg.preset, "preset")?.unwrap_or(Preset::Benchmark).config(p.seed),
        };
        sc.seed = p.seed;
        if let Some(n) = cfg.n_conversations {
            sc.n_conversations = n;
        }
        log::info!("no corpus given; generating {} synthetic conversations", sc.n_conversations);
        CorpusData::from_synth(&synth::generate(&sc)?)?
    };
    let reports = eval::run_grid(&data, &specs, &p)?;
    for r in &reports {
        log::info!(
            "{}: overall {:.1}",
            r.experiment.as_ref().map_or("?", |e| e.id.as_str()),
            r.metrics.acc_overall
        );
    }
    write_grid(&out, &reports)?;
    Ok(())
}

pub fn predict(cfg: RunConfig) -> Result<(), CliError> {
    let out = begin(&cfg)?;
    let model = StackedForecaster::load(required(&cfg.model, "model")?)?;
    let conv = required(&cfg.conv, "conv")?.clone();
    let data = load_corpus(&cfg)?;
    if !data.turns.contains_key(&conv) {
        return Err(CliError::Validation(anyhow::anyhow!("--conv {conv:?}: no such conversation")));
    }
    if model.fitted_on.contains(&conv) {
        log::warn!("{conv} was part of the training data");
    }
    let frames = data.frames(std::slice::from_ref(&conv), &model.preprocessing, &model.window)?;
    let frames = &frames[0];
    let preds = model.predict_conversation(frames, mode(&cfg)?)?;
    let path = out.join("predictions.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("writing {}", path.display())).map_err(CliError::Validation)?);
    let mut header = String::from("conv_id,turn,slot,horizon,target_turn,label");
    for c in &model.class_order {
        header.push_str(&format!(",p_{c}"));
    }
    let mut rows = 0;
    let mut body = header + "\n";
    for (t, p) in preds.iter().enumerate() {
        let truth = frames.targets(t);
        for (i, tp) in p.targets.iter().enumerate() {
            if truth[i].is_none() {
                continue;
            }
            body.push_str(&format!(
                "{conv},{t},{},{},{},{}",
                tp.slot,
                tp.horizon,
                t + tp.horizon,
                model.class_order[tp.label]
            ));
            for v in &tp.proba {
                body.push_str(&format!(",{v}"));
            }
            body.push('\n');
            rows += 1;
        }
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display())).map_err(CliError::Validation)?;
    log::info!("{rows} predictions for {conv} written to {}", path.display());
    Ok(())
}
