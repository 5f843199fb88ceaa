//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes plain arguments and returns a JSON string. The `*_json`
//! functions hold the logic so native tests can call them.

use erfc::eval::{run_experiment, CorpusData, ExperimentSpec, PipelineConfig};
use erfc::corpus::{Emotion, Scheme};
use erfc::model::LearnerSpec;
use erfc::synth::{self, current_labels_oracle, Preset};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest corpus the page will train on; keeps the tab responsive.
const MAX_CONVERSATIONS: usize = 120;

fn preset(name: &str) -> Result<Preset, String> {
    name.parse()
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TurnView {
    labels: [&'static str; 2],
    avd: [[f64; 3]; 2],
    high: [bool; 2],
}

/// One simulated conversation as a list of turns.
pub fn simulate_json(preset_name: &str, seed: u64, n_turns: usize) -> Result<String, String> {
    let cfg = preset(preset_name)?.config(seed);
    let n_turns = n_turns.clamp(1, 200);
    let mut rng = erfc::seed::rng(seed, &[]);
    let sim = synth::simulate(&cfg, "demo".into(), n_turns, &mut rng);
    let name = |c: usize| Emotion::ALL[c].name();
    let turns: Vec<TurnView> = (0..n_turns)
        .map(|t| TurnView {
            labels: [name(sim.labels[t][0]), name(sim.labels[t][1])],
            avd: sim.avd[t],
            high: sim.high[t],
        })
        .collect();
    to_json(&turns)
}

#[derive(Serialize)]
struct OracleView {
    influence: f64,
    /// Percent per horizon.
    accuracy: Vec<f64>,
    chance: f64,
}

/// Exact accuracy of a predictor that sees both speakers' current labels,
/// for horizons `0..=k`, with the cross-speaker weight overridden.
pub fn oracle_json(preset_name: &str, influence: f64, k: usize) -> Result<String, String> {
    let mut cfg = preset(preset_name)?.config(0);
    cfg.influence = influence;
    let curve = current_labels_oracle(&cfg, k.min(10)).map_err(|e| e.to_string())?;
    to_json(&OracleView {
        influence,
        accuracy: curve.accuracy.iter().map(|a| 100.0 * a).collect(),
        chance: 100.0 / cfg.n_classes as f64,
    })
}

#[derive(Serialize)]
struct ForecastView {
    acc_per_horizon: Vec<f64>,
    acc_overall: f64,
    oracle: Vec<f64>,
    n_test_examples: usize,
}

/// Generates a small corpus, trains the stacked forecaster with window `w`
/// and scores the held-out session.
pub fn forecast_json(preset_name: &str, seed: u64, n_conversations: usize, w: usize, learner: &str) -> Result<String, String> {
    let mut cfg = preset(preset_name)?.config(seed);
    cfg.n_conversations = n_conversations.clamp(10, MAX_CONVERSATIONS);
    let corpus = synth::generate(&cfg).map_err(|e| e.to_string())?;
    let data = CorpusData::from_synth(&corpus).map_err(|e| e.to_string())?;
    let pipeline = PipelineConfig {
        horizon: 3,
        learner: learner.parse::<LearnerSpec>().map_err(|e| e.to_string())?,
        seed,
        ..PipelineConfig::default()
    };
    let spec = ExperimentSpec::new("demo", Scheme::Six, true, w.min(3));
    let report = run_experiment(&data, &spec, &pipeline).map_err(|e| e.to_string())?;
    let oracle = current_labels_oracle(&cfg, pipeline.horizon).map_err(|e| e.to_string())?;
    to_json(&ForecastView {
        acc_per_horizon: report.metrics.acc_per_horizon,
        acc_overall: report.metrics.acc_overall,
        oracle: oracle.accuracy.iter().map(|a| 100.0 * a).collect(),
        n_test_examples: report.n_test_examples,
    })
}

#[wasm_bindgen]
pub fn simulate(preset: &str, seed: u64, n_turns: usize) -> Result<String, JsValue> {
    simulate_json(preset, seed, n_turns).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn oracle_curve(preset: &str, influence: f64, k: usize) -> Result<String, JsValue> {
    oracle_json(preset, influence, k).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn forecast(preset: &str, seed: u64, n_conversations: usize, w: usize, learner: &str) -> Result<String, JsValue> {
    forecast_json(preset, seed, n_conversations, w, learner).map_err(|e| JsValue::from_str(&e))
}
