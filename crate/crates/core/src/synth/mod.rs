//! Synthetic dyadic conversations with known generative dynamics.
//!
//! Each turn both speakers hold an emotion. Speaker `s` moves to its next
//! emotion by mixing its partner's cross-transition row with its own
//! self-transition row: `alpha * P_cross[partner] + (1 - alpha) * P_self[self]`.
//! Feature vectors are Gaussian clusters around class centers, and AVD is a
//! class mean plus Gaussian noise clipped to `[1, 5]`.
//!
//! An optional per-turn intensity flag (independent across turns and
//! speakers) shifts that turn's AVD and swaps the speaker's self-transition
//! row for `p_self_high`. It is the only way past AVD can carry information
//! about future emotions beyond what past labels already give.

mod oracle;
mod presets;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AvdTriple, Conversation, CorpusError, Emotion, FeatureKey, FeatureStore, Modality, UtteranceRecord};
use crate::{par, seed};

pub use oracle::{bayes_oracle, current_labels_oracle, Conditioning, OracleCurve, MIN_TRIALS};
pub use presets::Preset;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDims {
    pub text: usize,
    pub audio: usize,
    pub speaker: usize,
}

impl SynthDims {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Speaker => self.speaker,
        }
    }
}

/// Hidden per-turn intensity that AVD reveals and that changes the next
/// self-transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intensity {
    pub prob: f64,
    pub avd_shift: [f64; 3],
    pub p_self_high: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub turns_mean: usize,
    pub n_conversations: usize,
    /// Weight of the partner's previous emotion in the transition mixture.
    pub influence: f64,
    pub p_self: Vec<Vec<f64>>,
    pub p_cross: Vec<Vec<f64>>,
    /// Distribution of both speakers' first emotions.
    pub initial: Vec<f64>,
    /// Distance between neighbouring cluster centers in each modality.
    pub separation: f64,
    pub emission_noise: f64,
    /// Cluster index per class; classes sharing an index emit identically.
    pub emission_groups: Vec<usize>,
    pub avd_means: Vec<[f64; 3]>,
    pub avd_noise: f64,
    pub dims: SynthDims,
    pub intensity: Option<Intensity>,
    pub sessions: u32,
    pub seed: u64,
}

fn check_stochastic(name: &str, m: &[Vec<f64>], c: usize) -> Result<(), SynthError> {
    if m.len() != c {
        return Err(SynthError::Invalid(format!("{name} has {} rows, expected {c}", m.len())));
    }
    for (i, row) in m.iter().enumerate() {
        check_distribution(&format!("{name} row {i}"), row, c)?;
    }
    Ok(())
}

fn check_distribution(name: &str, row: &[f64], c: usize) -> Result<(), SynthError> {
    if row.len() != c || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(SynthError::Invalid(format!("{name} must hold {c} probabilities")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(SynthError::Invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

impl SynthConfig {
    /// Checks the dynamics only; enough for the label-only oracle.
    pub fn validate_dynamics(&self) -> Result<(), SynthError> {
        let c = self.n_classes;
        if c < 2 {
            return Err(SynthError::Invalid("need at least 2 classes".into()));
        }
        if !(0.0..=1.0).contains(&self.influence) {
            return Err(SynthError::Invalid(format!("influence {} outside [0, 1]", self.influence)));
        }
        check_stochastic("p_self", &self.p_self, c)?;
        check_stochastic("p_cross", &self.p_cross, c)?;
        check_distribution("initial", &self.initial, c)?;
        if let Some(i) = &self.intensity {
            if !(0.0..=1.0).contains(&i.prob) {
                return Err(SynthError::Invalid("intensity prob outside [0, 1]".into()));
            }
            check_stochastic("p_self_high", &i.p_self_high, c)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.validate_dynamics()?;
        let c = self.n_classes;
        let bad = |m: String| Err(SynthError::Invalid(m));
        if c > Emotion::ALL.len() {
            return bad(format!("at most {} classes map onto emotion labels", Emotion::ALL.len()));
        }
        if self.turns_mean == 0 || self.n_conversations == 0 || self.sessions < 2 {
            return bad("need turns_mean >= 1, n_conversations >= 1 and sessions >= 2".into());
        }
        if !(self.separation >= 0.0 && self.emission_noise > 0.0 && self.avd_noise > 0.0) {
            return bad("separation must be >= 0 and noise levels > 0".into());
        }
        if self.emission_groups.len() != c {
            return bad(format!("emission_groups needs {c} entries"));
        }
        let groups = self.emission_groups.iter().max().map_or(0, |g| g + 1);
        for m in Modality::ALL {
            if self.dims.get(m) < groups {
                return bad(format!("{m} dim {} cannot hold {groups} cluster centers", self.dims.get(m)));
            }
        }
        if self.avd_means.len() != c || self.avd_means.iter().flatten().any(|v| !(1.0..=5.0).contains(v)) {
            return bad(format!("avd_means needs {c} triples within [1, 5]"));
        }
        Ok(())
    }

    /// Cluster center of `class` in a modality of width `dim`.
    pub fn center(&self, class: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[self.emission_groups[class]] = self.separation / std::f64::consts::SQRT_2;
        v
    }

    /// Next-emotion distribution for a speaker in `own` whose partner was in
    /// `partner`, with the given probability that the speaker's turn was
    /// high-intensity.
    pub fn transition(&self, own: usize, partner: usize, p_high: f64) -> Vec<f64> {
        let a = self.influence;
        (0..self.n_classes)
            .map(|c| {
                let own_row = match &self.intensity {
                    Some(i) => (1.0 - p_high) * self.p_self[own][c] + p_high * i.p_self_high[own][c],
                    None => self.p_self[own][c],
                };
                a * self.p_cross[partner][c] + (1.0 - a) * own_row
            })
            .collect()
    }

    pub fn intensity_prob(&self) -> f64 {
        self.intensity.as_ref().map_or(0.0, |i| i.prob)
    }

    pub fn conv_id(&self, i: usize) -> String {
        format!("Ses{:02}_syn{i:04}", (i as u32) % self.sessions + 1)
    }
}

/// One simulated conversation before it is written as corpus records.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConversation {
    pub conv_id: String,
    pub labels: Vec<[usize; 2]>,
    pub high: Vec<[bool; 2]>,
    pub avd: Vec<[[f64; 3]; 2]>,
    /// `emissions[t][slot][modality]`.
    pub emissions: Vec<[[Vec<f64>; 3]; 2]>,
}

pub(crate) fn sample_categorical<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the total; take the last class with mass.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Samples one conversation of `n_turns` turns.
pub fn simulate<R: Rng>(cfg: &SynthConfig, conv_id: String, n_turns: usize, rng: &mut R) -> SimConversation {
    let q = cfg.intensity_prob();
    let mut sim = SimConversation {
        conv_id,
        labels: Vec::with_capacity(n_turns),
        high: Vec::with_capacity(n_turns),
        avd: Vec::with_capacity(n_turns),
        emissions: Vec::with_capacity(n_turns),
    };
    for t in 0..n_turns {
        let labels = if t == 0 {
            [0, 1].map(|_| sample_categorical(rng, &cfg.initial))
        } else {
            let prev = sim.labels[t - 1];
            let high = sim.high[t - 1];
            [0, 1].map(|s| {
                let p = cfg.transition(prev[s], prev[1 - s], f64::from(u8::from(high[s])));
                sample_categorical(rng, &p)
            })
        };
        let high = [0, 1].map(|_| q > 0.0 && rng.random::<f64>() < q);
        let avd = [0, 1].map(|s| {
            let shift = match (&cfg.intensity, high[s]) {
                (Some(i), true) => i.avd_shift,
                _ => [0.0; 3],
            };
            let mean = cfg.avd_means[labels[s]];
            [0, 1, 2].map(|j| (mean[j] + shift[j] + cfg.avd_noise * gaussian(rng)).clamp(1.0, 5.0))
        });
        let emissions = [0, 1].map(|s| {
            Modality::ALL.map(|m| {
                let mut v = cfg.center(labels[s], cfg.dims.get(m));
                v.iter_mut().for_each(|x| *x += cfg.emission_noise * gaussian(rng));
                v
            })
        });
        sim.labels.push(labels);
        sim.high.push(high);
        sim.avd.push(avd);
        sim.emissions.push(emissions);
    }
    sim
}

/// Turn count drawn uniformly from `[T/2, 3T/2]`, at least 1.
pub fn sample_turns<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> usize {
    let lo = (cfg.turns_mean / 2).max(1);
    let hi = (3 * cfg.turns_mean / 2).max(lo);
    rng.random_range(lo..=hi)
}

/// Everything an oracle needs: the config and the realized latent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub labels: BTreeMap<String, Vec<[usize; 2]>>,
    pub intensity: BTreeMap<String, Vec<[bool; 2]>>,
}

/// A generated corpus in the same in-memory form the loaders produce.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub conversations: Vec<Conversation>,
    pub text: FeatureStore,
    pub audio: FeatureStore,
    pub speaker: FeatureStore,
    pub truth: SynthTruth,
}

impl SynthCorpus {
    pub fn store(&self, m: Modality) -> &FeatureStore {
        match m {
            Modality::Text => &self.text,
            Modality::Audio => &self.audio,
            Modality::Speaker => &self.speaker,
        }
    }
}

fn records<R: Rng>(sim: &SimConversation, rng: &mut R, classes: &[Emotion]) -> Vec<UtteranceRecord> {
    let speakers = ["A", "B"];
    let mut out = Vec::new();
    let mut clock = 0.0;
    for (t, labels) in sim.labels.iter().enumerate() {
        for s in 0..2 {
            let n_utts = rng.random_range(1..=2);
            for j in 0..n_utts {
                let dur = rng.random_range(1.0..4.0);
                out.push(UtteranceRecord {
                    conv_id: sim.conv_id.clone(),
                    utt_id: format!("{}_t{t:03}_{}{j}", sim.conv_id, speakers[s]),
                    speaker: speakers[s].to_string(),
                    t_start: clock,
                    t_end: clock + dur,
                    text: Some(format!("turn {t} speaker {}", speakers[s])),
                    emotion: classes[labels[s]],
                    avd: Some(AvdTriple::from(sim.avd[t][s])),
                });
                clock += dur + 0.25;
            }
        }
    }
    out
}

/// Samples a full corpus. Conversation `i` uses its own derived seed, so the
/// output does not depend on how generation is scheduled.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let classes = &Emotion::ALL[..cfg.n_classes];
    let sims = par::map(cfg.n_conversations, |i| {
        let mut rng = seed::rng(cfg.seed, &[seed::stream::SYNTH, i as u64]);
        let n_turns = sample_turns(cfg, &mut rng);
        let sim = simulate(cfg, cfg.conv_id(i), n_turns, &mut rng);
        let recs = records(&sim, &mut rng, classes);
        (sim, recs)
    });
    let mut stores = Modality::ALL.map(|m| FeatureStore::new(m, cfg.dims.get(m)));
    let mut conversations = Vec::with_capacity(sims.len());
    let mut truth = SynthTruth {
        config: cfg.clone(),
        labels: BTreeMap::new(),
        intensity: BTreeMap::new(),
    };
    for (sim, recs) in sims {
        for (t, sides) in sim.emissions.iter().enumerate() {
            for (s, side) in sides.iter().enumerate() {
                for (m, v) in side.iter().enumerate() {
                    stores[m].insert(FeatureKey::new(sim.conv_id.clone(), t, s as u8), v.clone())?;
                }
            }
        }
        truth.labels.insert(sim.conv_id.clone(), sim.labels);
        truth.intensity.insert(sim.conv_id.clone(), sim.high);
        conversations.push(Conversation {
            conv_id: sim.conv_id,
            records: recs,
        });
    }
    conversations.sort_by(|a, b| a.conv_id.cmp(&b.conv_id));
    let [text, audio, speaker] = stores;
    Ok(SynthCorpus {
        conversations,
        text,
        audio,
        speaker,
        truth,
    })
}

/// Writes `utterances.jsonl`, `text.csv`, `audio.csv`, `speaker.csv` and
/// `truth.json` into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &SynthCorpus) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    crate::corpus::save_utterances(dir.join("utterances.jsonl"), &corpus.conversations)?;
    for m in Modality::ALL {
        crate::corpus::save_features(dir.join(format!("{m}.csv")), corpus.store(m))?;
    }
    let path = dir.join("truth.json");
    let mut f = BufWriter::new(File::create(&path).map_err(io(&path))?);
    serde_json::to_writer_pretty(&mut f, &corpus.truth).map_err(|e| SynthError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(io(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turns::assemble_turns;

    fn small() -> SynthConfig {
        let mut cfg = Preset::Benchmark.config(3);
        cfg.n_conversations = 6;
        cfg
    }

    #[test]
    fn rejects_bad_dynamics() {
        let mut cfg = small();
        cfg.p_self[2][0] += 1e-9;
        assert!(cfg.validate().unwrap_err().to_string().contains("p_self row 2"));
        let mut cfg = small();
        cfg.influence = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.dims.audio = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn turns_and_labels_survive_the_corpus_format() {
        let cfg = small();
        let corpus = generate(&cfg).unwrap();
        assert_eq!(corpus.conversations.len(), 6);
        for conv in &corpus.conversations {
            let turns = assemble_turns(conv).unwrap();
            let truth = &corpus.truth.labels[&conv.conv_id];
            assert_eq!(turns.len(), truth.len());
            for (turn, labels) in turns.iter().zip(truth) {
                for s in 0..2 {
                    assert_eq!(turn.sides[s].label, Some(Emotion::ALL[labels[s]]));
                    assert!(corpus.text.get(&turn.key(s as u8)).is_some());
                }
            }
            let lo = cfg.turns_mean / 2;
            assert!((lo..=3 * cfg.turns_mean / 2).contains(&truth.len()));
        }
        let sessions: std::collections::BTreeSet<&str> =
            corpus.conversations.iter().map(|c| &c.conv_id[..5]).collect();
        assert_eq!(sessions.len(), 5);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_corpus(a.path(), &generate(&cfg).unwrap()).unwrap();
        write_corpus(b.path(), &generate(&cfg).unwrap()).unwrap();
        for f in ["utterances.jsonl", "text.csv", "audio.csv", "speaker.csv", "truth.json"] {
            let x = fs::read(a.path().join(f)).unwrap();
            assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
            assert!(!x.is_empty());
        }
        let loaded = crate::corpus::load_utterances(a.path().join("utterances.jsonl")).unwrap();
        assert_eq!(loaded.len(), 6);
    }

    #[test]
    fn uncoupled_speakers_are_uncorrelated() {
        let mut cfg = Preset::Benchmark.config(1);
        cfg.influence = 0.0;
        let mut rng = seed::rng(5, &[]);
        // Indicator of class 0 for each speaker, pooled over many turns.
        let (mut n, mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        while n < 1e5 {
            let sim = simulate(&cfg, "c".into(), 50, &mut rng);
            for l in &sim.labels {
                let (a, b) = (f64::from(u8::from(l[0] == 0)), f64::from(u8::from(l[1] == 0)));
                n += 1.0;
                sa += a;
                sb += b;
                sab += a * b;
                saa += a * a;
                sbb += b * b;
            }
        }
        let cov = sab / n - sa / n * sb / n;
        let corr = cov / ((saa / n - (sa / n).powi(2)) * (sbb / n - (sb / n).powi(2))).sqrt();
        assert!(corr.abs() < 0.02, "corr {corr}");
    }

    #[test]
    fn avd_is_clipped() {
        let mut cfg = small();
        cfg.avd_noise = 5.0;
        let corpus = generate(&cfg).unwrap();
        for conv in &corpus.conversations {
            for r in &conv.records {
                assert!(r.avd.unwrap().out_of_range().is_none());
            }
        }
    }
}
