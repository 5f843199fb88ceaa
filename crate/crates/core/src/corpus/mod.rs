//! Diarized dyadic conversations: data model, JSONL ingestion and validation.

mod emotion;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emotion::{Emotion, Scheme};
pub use store::{
    load_features, read_features, save_features, write_features, FeatureKey, FeatureStore, Modality,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("non-dyadic conversation {conv_id}: {speakers} distinct speaker(s), expected 2")]
    NonDyadic { conv_id: String, speakers: usize },
    #[error("conversation {conv_id}: duplicate utt_id {utt_id}")]
    DuplicateUttId { conv_id: String, utt_id: String },
    #[error("utterance {utt_id}: AVD component {value} outside [1, 5]")]
    AvdOutOfRange { utt_id: String, value: f64 },
    #[error("utterance {utt_id}: t_start must be finite and strictly before t_end")]
    InvalidTimes { utt_id: String },
    #[error("unknown emotion label {0:?}")]
    UnknownEmotion(String),
    #[error("label {label} is not valid under the {scheme} scheme")]
    LabelNotInScheme { label: Emotion, scheme: Scheme },
    #[error("unknown label scheme {0:?} (expected six or four)")]
    UnknownScheme(String),
    #[error("unknown modality {0:?} (expected text, audio or speaker)")]
    UnknownModality(String),
    #[error("conversation {0}: cannot derive session (expected an SesNN_ prefix or an override)")]
    UnknownSession(String),
    #[error("feature file: {0}")]
    FeatureHeader(String),
    #[error("feature file line {line}: {message}")]
    FeatureRow { line: usize, message: String },
    #[error("feature file line {line}: expected {expected} features, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate feature key {0}")]
    DuplicateKey(FeatureKey),
    #[error("feature key {0} does not match any turn side")]
    DanglingKey(FeatureKey),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Activation, valence, dominance on the annotation scale `[1, 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct AvdTriple {
    pub activation: f64,
    pub valence: f64,
    pub dominance: f64,
}

impl AvdTriple {
    pub const MIN: f64 = 1.0;
    pub const MAX: f64 = 5.0;

    pub fn new(activation: f64, valence: f64, dominance: f64) -> Self {
        AvdTriple {
            activation,
            valence,
            dominance,
        }
    }

    pub fn components(&self) -> [f64; 3] {
        [self.activation, self.valence, self.dominance]
    }

    /// First component that is non-finite or outside `[1, 5]`.
    pub fn out_of_range(&self) -> Option<f64> {
        self.components()
            .into_iter()
            .find(|v| !v.is_finite() || *v < Self::MIN || *v > Self::MAX)
    }

    /// Min-max scaled onto `[0, 1]`.
    pub fn unit_scaled(&self) -> [f64; 3] {
        self.components()
            .map(|v| (v - Self::MIN) / (Self::MAX - Self::MIN))
    }
}

impl From<[f64; 3]> for AvdTriple {
    fn from(v: [f64; 3]) -> Self {
        AvdTriple::new(v[0], v[1], v[2])
    }
}

impl From<AvdTriple> for [f64; 3] {
    fn from(a: AvdTriple) -> Self {
        a.components()
    }
}

/// One diarized utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub conv_id: String,
    pub utt_id: String,
    pub speaker: String,
    pub t_start: f64,
    pub t_end: f64,
    pub text: Option<String>,
    pub emotion: Emotion,
    pub avd: Option<AvdTriple>,
}

impl UtteranceRecord {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end) {
            return Err(CorpusError::InvalidTimes {
                utt_id: self.utt_id.clone(),
            });
        }
        if let Some(value) = self.avd.as_ref().and_then(AvdTriple::out_of_range) {
            return Err(CorpusError::AvdOutOfRange {
                utt_id: self.utt_id.clone(),
                value,
            });
        }
        Ok(())
    }
}

// Wire shape: the emotion is a free-form string so unknown labels surface as
// a line-numbered error rather than a serde message.
#[derive(Deserialize)]
struct RawUtterance {
    conv_id: String,
    utt_id: String,
    speaker: String,
    t_start: f64,
    t_end: f64,
    #[serde(default)]
    text: Option<String>,
    emotion: String,
    #[serde(default)]
    avd: Option<[f64; 3]>,
}

/// A validated conversation: records sorted by `t_start`, exactly two speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub conv_id: String,
    pub records: Vec<UtteranceRecord>,
}

impl Conversation {
    /// Distinct speaker tags in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.speaker.as_str()) {
                out.push(&r.speaker);
            }
        }
        out
    }
}

/// Parses JSONL utterances from a reader and validates every invariant.
pub fn read_utterances<R: BufRead>(reader: R) -> Result<Vec<Conversation>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawUtterance = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let emotion = raw.emotion.parse::<Emotion>().map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let record = UtteranceRecord {
            conv_id: raw.conv_id,
            utt_id: raw.utt_id,
            speaker: raw.speaker,
            t_start: raw.t_start,
            t_end: raw.t_end,
            text: raw.text,
            emotion,
            avd: raw.avd.map(AvdTriple::from),
        };
        record.validate()?;
        records.push(record);
    }
    group_conversations(records)
}

/// Groups validated records by `conv_id` (conversations ordered by id) and
/// checks per-conversation invariants.
pub fn group_conversations(records: Vec<UtteranceRecord>) -> Result<Vec<Conversation>, CorpusError> {
    let mut grouped: BTreeMap<String, Vec<UtteranceRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.conv_id.clone()).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(conv_id, mut records)| {
            records.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
            let mut seen = BTreeSet::new();
            for r in &records {
                if !seen.insert(r.utt_id.as_str()) {
                    return Err(CorpusError::DuplicateUttId {
                        conv_id,
                        utt_id: r.utt_id.clone(),
                    });
                }
            }
            let conv = Conversation { conv_id, records };
            let speakers = conv.speakers().len();
            if speakers != 2 {
                return Err(CorpusError::NonDyadic {
                    conv_id: conv.conv_id,
                    speakers,
                });
            }
            Ok(conv)
        })
        .collect()
}

pub fn load_utterances(path: impl AsRef<Path>) -> Result<Vec<Conversation>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_utterances(BufReader::new(file))
}

/// Writes conversations in the canonical JSONL form (one record per line,
/// conversations and records in their stored order).
pub fn write_utterances<W: Write>(mut w: W, conversations: &[Conversation]) -> std::io::Result<()> {
    for conv in conversations {
        for r in &conv.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn save_utterances(path: impl AsRef<Path>, conversations: &[Conversation]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_utterances(&mut w, conversations)
        .and_then(|_| w.flush())
        .map_err(|e| CorpusError::io(path, e))
}

/// Session number for a conversation: an explicit override wins, otherwise the
/// `SesNN` prefix of the id (`Ses03_F_impro01` is session 3).
pub fn session_of(conv_id: &str, overrides: &BTreeMap<String, u32>) -> Result<u32, CorpusError> {
    if let Some(&s) = overrides.get(conv_id) {
        return Ok(s);
    }
    conv_id
        .strip_prefix("Ses")
        .map(|rest| rest.chars().take_while(char::is_ascii_digit).collect::<String>())
        .filter(|digits| !digits.is_empty())
        .and_then(|digits| digits.parse().ok())
        .ok_or_else(|| CorpusError::UnknownSession(conv_id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(conv: &str, utt: &str, spk: &str, t0: f64, t1: f64, emo: &str, avd: Option<[f64; 3]>) -> String {
        serde_json::json!({
            "conv_id": conv, "utt_id": utt, "speaker": spk, "t_start": t0, "t_end": t1,
            "text": "hi", "emotion": emo, "avd": avd,
        })
        .to_string()
    }

    fn parse(lines: &[String]) -> Result<Vec<Conversation>, CorpusError> {
        read_utterances(lines.join("\n").as_bytes())
    }

    #[test]
    fn minimal_valid_file() {
        let convs = parse(&[
            line("Ses01_a", "u1", "A", 0.0, 1.0, "neu", None),
            line("Ses01_a", "u2", "B", 1.0, 2.0, "Sad", Some([2.0, 1.5, 2.5])),
        ])
        .unwrap();
        assert_eq!(convs.len(), 1);
        assert_eq!(convs[0].records.len(), 2);
        assert_eq!(convs[0].records[1].avd, Some(AvdTriple::new(2.0, 1.5, 2.5)));
    }

    #[test]
    fn three_speakers_rejected() {
        let err = parse(&[
            line("c", "u1", "A", 0.0, 1.0, "neu", None),
            line("c", "u2", "B", 1.0, 2.0, "neu", None),
            line("c", "u3", "C", 2.0, 3.0, "neu", None),
        ])
        .unwrap_err();
        assert!(matches!(err, CorpusError::NonDyadic { speakers: 3, .. }));
        assert!(err.to_string().contains("non-dyadic conversation"));
    }

    #[test]
    fn monologue_rejected() {
        let err = parse(&[line("c", "u1", "A", 0.0, 1.0, "neu", None)]).unwrap_err();
        assert!(matches!(err, CorpusError::NonDyadic { speakers: 1, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse(&[line("c", "u1", "A", 0.0, 1.0, "neu", None), "{not json".into()]).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
        let err = parse(&[line("c", "u1", "A", 0.0, 1.0, "bored", None)]).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }

    #[test]
    fn duplicate_utt_id_rejected() {
        let err = parse(&[
            line("c", "u1", "A", 0.0, 1.0, "neu", None),
            line("c", "u1", "B", 1.0, 2.0, "neu", None),
        ])
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateUttId { .. }));
    }

    #[test]
    fn avd_and_times_validated() {
        let err = parse(&[line("c", "u1", "A", 0.0, 1.0, "neu", Some([0.5, 3.0, 3.0]))]).unwrap_err();
        assert!(matches!(err, CorpusError::AvdOutOfRange { value, .. } if value == 0.5));
        let err = parse(&[line("c", "u1", "A", 1.0, 1.0, "neu", None)]).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidTimes { .. }));
    }

    #[test]
    fn records_sorted_and_grouped() {
        let convs = parse(&[
            line("b", "u2", "B", 3.0, 4.0, "neu", None),
            line("a", "x1", "A", 0.0, 1.0, "neu", None),
            line("b", "u1", "A", 0.0, 1.0, "neu", None),
            line("a", "x2", "B", 1.0, 2.0, "neu", None),
        ])
        .unwrap();
        assert_eq!(convs.iter().map(|c| c.conv_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(convs[1].records[0].utt_id, "u1");
    }

    #[test]
    fn sessions() {
        let mut overrides = BTreeMap::new();
        assert_eq!(session_of("Ses03_F_impro01", &overrides).unwrap(), 3);
        assert!(session_of("call_17", &overrides).is_err());
        overrides.insert("call_17".to_string(), 5);
        assert_eq!(session_of("call_17", &overrides).unwrap(), 5);
    }
}
