use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CliError, CommonArgs};
use crate::synth::SynthConfig;

/// Every setting any stage reads, after merging the config file and flags.
/// Unset fields mean the stage default, so a written copy fed back through
/// `--config` reruns the stage unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub utterances: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub audio: Option<PathBuf>,
    pub speaker: Option<PathBuf>,
    pub pca_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub audio_components: Option<usize>,
    pub speaker_components: Option<usize>,
    pub w: Option<usize>,
    pub w_text: Option<usize>,
    pub w_audio: Option<usize>,
    pub w_speaker: Option<usize>,
    pub w_emotion: Option<usize>,
    pub horizon: Option<usize>,
    pub use_avd: Option<bool>,
    pub scheme: Option<String>,
    pub learner: Option<String>,
    pub folds: Option<usize>,
    pub specs: Option<String>,
    pub mode: Option<String>,
    pub split: Option<String>,
    pub conv: Option<String>,
    pub preset: Option<String>,
    pub n_conversations: Option<usize>,
    pub turns_mean: Option<usize>,
    pub oracle: Option<bool>,
    /// Session number for conversation ids without a `SesNN` prefix.
    pub sessions: BTreeMap<String, u32>,
    /// Full generator settings; overrides `preset`.
    pub synth: Option<SynthConfig>,
}

impl RunConfig {
    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("missing --out".into()))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        let mut body = serde_json::to_vec_pretty(self)?;
        body.push(b'\n');
        fs::write(dir.join("resolved-config.json"), body)?;
        Ok(())
    }
}

/// Merges the optional config file with the stage's flags (flags win) and
/// sizes the worker pool.
pub fn resolve<A: Serialize>(common: &CommonArgs, args: &A) -> Result<RunConfig, CliError> {
    let mut merged = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
            match v {
                Value::Object(m) => m,
                _ => return Err(CliError::Usage(format!("--config {}: expected a JSON object", path.display()))),
            }
        }
        None => serde_json::Map::new(),
    };
    if let Value::Object(flags) = serde_json::to_value(args)? {
        for (k, v) in flags {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    let cfg: RunConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| {
        let src = common
            .config
            .as_ref()
            .map_or_else(|| "flags".to_string(), |p| format!("--config {}", p.display()));
        CliError::Usage(format!("{src}: {e}"))
    })?;
    init_pool(cfg.jobs)?;
    Ok(cfg)
}

fn init_pool(jobs: Option<usize>) -> Result<(), CliError> {
    if jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j);
    }
    // Tests may run several commands in one process; keep the first pool.
    if let Err(e) = b.build_global() {
        log::debug!("worker pool already initialised: {e}");
    }
    Ok(())
}
