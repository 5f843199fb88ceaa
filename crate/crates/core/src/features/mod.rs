//! Context-window encoding of turns into flat example vectors.
//!
//! Layout of `x`, repeated for slot 0 then slot 1:
//!
//! ```text
//! text(t), text(t-1), .., text(t-w_t)
//! audio(t), .., audio(t-w_a)
//! speaker(t), .., speaker(t-w_s)
//! [code(t-1), a, v, d], .., [code(t-w_e), a, v, d]     (a, v, d only with use_avd)
//! ```
//!
//! Turns before the start of the conversation are zero vectors with the
//! reserved no-history code (one past the last class). The emotion block never
//! includes turn `t` itself. Targets are the labels of turns `t..=t+k` for
//! both slots, masked when the turn is past the end or the side is absent.

mod dataset;
mod pca;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FeatureKey, FeatureStore, Modality, Scheme};
use crate::turns::Turn;

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetError, DatasetMeta, Preprocessing};
pub use pca::{Pca, PcaError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("missing {modality} features for {key}")]
    MissingBundle { modality: Modality, key: FeatureKey },
    #[error("AVD required but absent for utterance {utt_id}")]
    AvdMissing { utt_id: String },
    #[error("{modality} PCA: {source}")]
    Pca {
        modality: Modality,
        #[source]
        source: PcaError,
    },
    #[error("{modality} PCA expects {expected}-d input but the store holds {found}-d vectors")]
    PcaInputMismatch {
        modality: Modality,
        expected: usize,
        found: usize,
    },
}

/// Context windows, forecast horizon and label options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub w_text: usize,
    pub w_audio: usize,
    pub w_speaker: usize,
    pub w_emotion: usize,
    /// Forecast horizon `k`: targets cover turns `t..=t+k`.
    pub horizon: usize,
    pub use_avd: bool,
    pub scheme: Scheme,
}

impl WindowConfig {
    /// Same window `w` for every modality.
    pub fn uniform(w: usize, horizon: usize, use_avd: bool, scheme: Scheme) -> Self {
        WindowConfig {
            w_text: w,
            w_audio: w,
            w_speaker: w,
            w_emotion: w,
            horizon,
            use_avd,
            scheme,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.scheme.class_count()
    }

    pub fn n_horizons(&self) -> usize {
        self.horizon + 1
    }

    /// Two slots times `k + 1` horizons.
    pub fn n_targets(&self) -> usize {
        2 * self.n_horizons()
    }

    pub fn target_index(&self, slot: u8, horizon: usize) -> usize {
        usize::from(slot) * self.n_horizons() + horizon
    }

    /// `(slot, horizon)` for a target index.
    pub fn target_of(&self, index: usize) -> (u8, usize) {
        ((index / self.n_horizons()) as u8, index % self.n_horizons())
    }

    fn emotion_width(&self) -> usize {
        if self.use_avd {
            4
        } else {
            1
        }
    }

    /// Width of one slot's block.
    pub fn slot_dim(&self, dims: &ModalDims) -> usize {
        (self.w_text + 1) * dims.text
            + (self.w_audio + 1) * dims.audio
            + (self.w_speaker + 1) * dims.speaker
            + self.w_emotion * self.emotion_width()
    }

    pub fn x_dim(&self, dims: &ModalDims) -> usize {
        2 * self.slot_dim(dims)
    }

    /// Offsets of the emotion-history block within `x`, one per slot.
    pub fn emotion_block_offsets(&self, dims: &ModalDims) -> [usize; 2] {
        let modal = self.slot_dim(dims) - self.w_emotion * self.emotion_width();
        [modal, self.slot_dim(dims) + modal]
    }
}

/// Per-modality vector widths after any reduction. Zero means the modality is
/// not used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalDims {
    pub text: usize,
    pub audio: usize,
    pub speaker: usize,
}

impl ModalDims {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Speaker => self.speaker,
        }
    }
}

/// One modality's raw store plus an optional reduction fitted on training data.
#[derive(Debug, Clone, Copy)]
pub struct ModalInput<'a> {
    pub store: &'a FeatureStore,
    pub pca: Option<&'a Pca>,
}

impl ModalInput<'_> {
    pub fn dim(&self) -> usize {
        self.pca.map_or(self.store.dim, Pca::n_components)
    }

    fn vector(&self, key: &FeatureKey) -> Result<Vec<f64>, FeatureError> {
        let raw = self.store.get(key).ok_or_else(|| FeatureError::MissingBundle {
            modality: self.store.modality,
            key: key.clone(),
        })?;
        match self.pca {
            Some(p) => p.transform(raw).map_err(|source| FeatureError::Pca {
                modality: self.store.modality,
                source,
            }),
            None => Ok(raw.to_vec()),
        }
    }
}

/// The modalities fed to the model. Omitted modalities contribute nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureInputs<'a> {
    pub text: Option<ModalInput<'a>>,
    pub audio: Option<ModalInput<'a>>,
    pub speaker: Option<ModalInput<'a>>,
}

impl<'a> FeatureInputs<'a> {
    pub fn dims(&self) -> ModalDims {
        ModalDims {
            text: self.text.map_or(0, |m| m.dim()),
            audio: self.audio.map_or(0, |m| m.dim()),
            speaker: self.speaker.map_or(0, |m| m.dim()),
        }
    }

    fn iter(&self) -> impl Iterator<Item = (Modality, &ModalInput<'a>)> {
        [
            (Modality::Text, self.text.as_ref()),
            (Modality::Audio, self.audio.as_ref()),
            (Modality::Speaker, self.speaker.as_ref()),
        ]
        .into_iter()
        .filter_map(|(m, i)| i.map(|i| (m, i)))
    }

    fn check(&self) -> Result<(), FeatureError> {
        for (modality, input) in self.iter() {
            if let Some(p) = input.pca {
                if p.input_dim() != input.store.dim {
                    return Err(FeatureError::PcaInputMismatch {
                        modality,
                        expected: p.input_dim(),
                        found: input.store.dim,
                    });
                }
            }
        }
        Ok(())
    }
}

/// One training or inference example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub conv_id: String,
    pub turn: usize,
    pub x: Vec<f64>,
    /// Indexed by [`WindowConfig::target_index`]; `None` is masked.
    pub targets: Vec<Option<usize>>,
}

impl Example {
    pub fn unmasked(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// Pre-encoded per-turn material for one conversation.
#[derive(Debug, Clone)]
struct SideFrame {
    present: bool,
    modal: [Option<Vec<f64>>; 3],
    label: Option<usize>,
    avd: Option<[f64; 3]>,
}

/// A conversation's turns encoded once, from which examples at any turn can
/// be assembled with either ground-truth or predicted emotion history.
#[derive(Debug, Clone)]
pub struct ConversationFrames {
    pub conv_id: String,
    cfg: WindowConfig,
    dims: ModalDims,
    frames: Vec<[SideFrame; 2]>,
}

impl ConversationFrames {
    pub fn new(turns: &[Turn], inputs: &FeatureInputs<'_>, cfg: &WindowConfig) -> Result<Self, FeatureError> {
        inputs.check()?;
        let mut frames = Vec::with_capacity(turns.len());
        for turn in turns {
            let mut sides = Vec::with_capacity(2);
            for side in &turn.sides {
                let mut modal: [Option<Vec<f64>>; 3] = [None, None, None];
                if side.present() {
                    let key = turn.key(side.slot);
                    for (m, input) in inputs.iter() {
                        modal[m as usize] = Some(input.vector(&key)?);
                    }
                }
                if cfg.use_avd && side.present() && side.avd.is_none() {
                    return Err(FeatureError::AvdMissing {
                        utt_id: side.utt_ids[0].clone(),
                    });
                }
                sides.push(SideFrame {
                    present: side.present(),
                    modal,
                    label: side.label.map(|l| cfg.scheme.project(l)),
                    avd: side.avd.map(|a| a.unit_scaled()),
                });
            }
            let second = sides.pop().expect("two sides");
            let first = sides.pop().expect("two sides");
            frames.push([first, second]);
        }
        Ok(ConversationFrames {
            conv_id: turns.first().map(|t| t.conv_id.clone()).unwrap_or_default(),
            cfg: *cfg,
            dims: inputs.dims(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> ModalDims {
        self.dims
    }

    /// Ground-truth encoded label of a turn side.
    pub fn label(&self, turn: usize, slot: u8) -> Option<usize> {
        self.frames.get(turn).and_then(|f| f[usize::from(slot)].label)
    }

    /// Whether the side exists (absent sides only occur on the last turn).
    pub fn present(&self, turn: usize, slot: u8) -> bool {
        self.frames.get(turn).is_some_and(|f| f[usize::from(slot)].present)
    }

    /// Input vector for turn `t`; `history(turn, slot)` supplies the emotion
    /// code for past turns.
    pub fn features_with(&self, t: usize, history: impl Fn(usize, u8) -> Option<usize>) -> Vec<f64> {
        let cfg = &self.cfg;
        let mut x = Vec::with_capacity(cfg.x_dim(&self.dims));
        let no_history = cfg.scheme.no_history_code() as f64;
        for slot in 0..2u8 {
            let s = usize::from(slot);
            for (m, w) in [(0usize, cfg.w_text), (1, cfg.w_audio), (2, cfg.w_speaker)] {
                let dim = self.dims.get(Modality::ALL[m]);
                if dim == 0 {
                    continue;
                }
                for lag in 0..=w {
                    match t.checked_sub(lag).and_then(|j| self.frames[j][s].modal[m].as_ref()) {
                        Some(v) => x.extend_from_slice(v),
                        None => x.extend(std::iter::repeat_n(0.0, dim)),
                    }
                }
            }
            for lag in 1..=cfg.w_emotion {
                let past = t.checked_sub(lag);
                let code = past.and_then(|j| history(j, slot));
                x.push(code.map_or(no_history, |c| c as f64));
                if cfg.use_avd {
                    let avd = match code {
                        Some(_) => past.and_then(|j| self.frames[j][s].avd).unwrap_or([0.0; 3]),
                        None => [0.0; 3],
                    };
                    x.extend_from_slice(&avd);
                }
            }
        }
        debug_assert_eq!(x.len(), cfg.x_dim(&self.dims));
        x
    }

    /// Input vector for turn `t` with ground-truth emotion history.
    pub fn features(&self, t: usize) -> Vec<f64> {
        self.features_with(t, |j, slot| self.label(j, slot))
    }

    pub fn targets(&self, t: usize) -> Vec<Option<usize>> {
        let cfg = &self.cfg;
        (0..cfg.n_targets())
            .map(|i| {
                let (slot, h) = cfg.target_of(i);
                self.label(t + h, slot)
            })
            .collect()
    }

    /// Teacher-forced examples for every turn.
    pub fn examples(&self) -> Vec<Example> {
        (0..self.len())
            .map(|t| Example {
                conv_id: self.conv_id.clone(),
                turn: t,
                x: self.features(t),
                targets: self.targets(t),
            })
            .collect()
    }
}

/// Builds one teacher-forced example per turn of every conversation.
pub fn build_examples(
    conversations: &[Vec<Turn>],
    inputs: &FeatureInputs<'_>,
    cfg: &WindowConfig,
) -> Result<Vec<Example>, FeatureError> {
    let mut out = Vec::new();
    for turns in conversations {
        out.extend(ConversationFrames::new(turns, inputs, cfg)?.examples());
    }
    Ok(out)
}
