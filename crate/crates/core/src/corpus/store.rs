use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Speaker,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Speaker];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Speaker => "speaker",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "audio" => Ok(Modality::Audio),
            "speaker" => Ok(Modality::Speaker),
            _ => Err(CorpusError::UnknownModality(s.to_string())),
        }
    }
}

/// Addresses one speaker side of one turn.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub conv_id: String,
    pub turn: usize,
    pub slot: u8,
}

impl FeatureKey {
    pub fn new(conv_id: impl Into<String>, turn: usize, slot: u8) -> Self {
        FeatureKey {
            conv_id: conv_id.into(),
            turn,
            slot,
        }
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, turn {}, slot {})", self.conv_id, self.turn, self.slot)
    }
}

/// Per-modality vectors keyed by turn side. All vectors share `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub modality: Modality,
    pub dim: usize,
    vectors: BTreeMap<FeatureKey, Vec<f64>>,
}

impl FeatureStore {
    pub fn new(modality: Modality, dim: usize) -> Self {
        FeatureStore {
            modality,
            dim,
            vectors: BTreeMap::new(),
        }
    }

    /// Adds a vector; rejects duplicates, wrong dimension and non-finite values.
    pub fn insert(&mut self, key: FeatureKey, v: Vec<f64>) -> Result<(), CorpusError> {
        if v.len() != self.dim {
            return Err(CorpusError::DimensionMismatch {
                line: 0,
                expected: self.dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CorpusError::FeatureRow {
                line: 0,
                message: format!("non-finite value for {key}"),
            });
        }
        if self.vectors.contains_key(&key) {
            return Err(CorpusError::DuplicateKey(key));
        }
        self.vectors.insert(key, v);
        Ok(())
    }

    pub fn get(&self, key: &FeatureKey) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureKey, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Fails on the first key that is not in `known`.
    pub fn check_keys(&self, known: &BTreeSet<FeatureKey>) -> Result<(), CorpusError> {
        match self.vectors.keys().find(|k| !known.contains(*k)) {
            Some(k) => Err(CorpusError::DanglingKey(k.clone())),
            None => Ok(()),
        }
    }
}

fn header_error(msg: impl Into<String>) -> CorpusError {
    CorpusError::FeatureHeader(msg.into())
}

/// Parses a feature CSV (`conv_id,turn,slot,f0,...,f{D-1}`).
pub fn read_features<R: Read>(reader: R, modality: Modality) -> Result<FeatureStore, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| header_error(e.to_string()))?.clone();
    if header.len() < 4 || &header[0] != "conv_id" || &header[1] != "turn" || &header[2] != "slot" {
        return Err(header_error("header must start with conv_id,turn,slot followed by f0.."));
    }
    for (i, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{i}") {
            return Err(header_error(format!("column {} should be f{i}, found {name:?}", i + 3)));
        }
    }
    let dim = header.len() - 3;
    let mut store = FeatureStore::new(modality, dim);
    for (i, rec) in rdr.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let rec = rec.map_err(|e| CorpusError::FeatureRow {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(CorpusError::DimensionMismatch {
                line,
                expected: dim,
                found: rec.len().saturating_sub(3),
            });
        }
        let row_err = |message: String| CorpusError::FeatureRow { line, message };
        let turn = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| row_err(format!("turn: {e}")))?;
        let slot = match rec[2].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(row_err(format!("slot must be 0 or 1, found {other:?}"))),
        };
        let v = rec
            .iter()
            .skip(3)
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| row_err(format!("value: {e}")))?;
        let key = FeatureKey::new(&rec[0], turn, slot);
        store.insert(key, v).map_err(|e| match e {
            CorpusError::FeatureRow { message, .. } => CorpusError::FeatureRow { line, message },
            other => other,
        })?;
    }
    Ok(store)
}

/// Loads a feature file; when `known` is given every key must resolve to a
/// turn side in it.
pub fn load_features(
    path: impl AsRef<Path>,
    modality: Modality,
    known: Option<&BTreeSet<FeatureKey>>,
) -> Result<FeatureStore, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let store = read_features(std::io::BufReader::new(file), modality)?;
    if let Some(known) = known {
        store.check_keys(known)?;
    }
    Ok(store)
}

pub fn write_features<W: Write>(w: W, store: &FeatureStore) -> Result<(), CorpusError> {
    let to_err = |e: csv::Error| CorpusError::FeatureHeader(e.to_string());
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let mut header = vec!["conv_id".to_string(), "turn".into(), "slot".into()];
    header.extend((0..store.dim).map(|i| format!("f{i}")));
    wtr.write_record(&header).map_err(to_err)?;
    let mut row = Vec::with_capacity(store.dim + 3);
    for (k, v) in store.iter() {
        row.clear();
        row.push(k.conv_id.clone());
        row.push(k.turn.to_string());
        row.push(k.slot.to_string());
        row.extend(v.iter().map(|x| x.to_string()));
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| CorpusError::FeatureHeader(e.to_string()))
}

pub fn save_features(path: impl AsRef<Path>, store: &FeatureStore) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    write_features(BufWriter::new(file), store)
}
