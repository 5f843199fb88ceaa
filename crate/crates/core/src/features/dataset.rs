use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Example, ModalDims, Pca, WindowConfig};

pub const DATASET_FORMAT: &str = "erfc-dataset/1";
const MASK: &str = "MASK";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn format_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reductions applied to raw modality vectors before windowing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub audio_pca: Option<Pca>,
    pub speaker_pca: Option<Pca>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub window: WindowConfig,
    pub dims: ModalDims,
    pub x_dim: usize,
    pub class_order: Vec<String>,
    pub preprocessing: Preprocessing,
}

/// A built example set plus everything needed to rebuild it for new data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(window: WindowConfig, dims: ModalDims, preprocessing: Preprocessing, examples: Vec<Example>) -> Self {
        Dataset {
            meta: DatasetMeta {
                format: DATASET_FORMAT.to_string(),
                window,
                dims,
                x_dim: window.x_dim(&dims),
                class_order: window.scheme.class_names(),
                preprocessing,
            },
            examples,
        }
    }
}

/// Writes `examples.csv`, `targets.csv` and `meta.json` into `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg = &ds.meta.window;

    let path = dir.join("examples.csv");
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let csv_err = |p: &Path, e: csv::Error| format_err(p, e.to_string());
    let mut header = vec!["conv_id".to_string(), "turn".to_string()];
    header.extend((0..ds.meta.x_dim).map(|i| format!("x{i}")));
    wtr.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for ex in &ds.examples {
        let mut row = vec![ex.conv_id.clone(), ex.turn.to_string()];
        row.extend(ex.x.iter().map(f64::to_string));
        wtr.write_record(&row).map_err(|e| csv_err(&path, e))?;
    }
    wtr.flush().map_err(io_err(&path))?;

    let path = dir.join("targets.csv");
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    wtr.write_record(["conv_id", "turn", "slot", "horizon", "label"])
        .map_err(|e| csv_err(&path, e))?;
    for ex in &ds.examples {
        for (i, t) in ex.targets.iter().enumerate() {
            let (slot, h) = cfg.target_of(i);
            let label = match t {
                Some(c) => ds.meta.class_order[*c].clone(),
                None => MASK.to_string(),
            };
            wtr.write_record([ex.conv_id.clone(), ex.turn.to_string(), slot.to_string(), h.to_string(), label])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    wtr.flush().map_err(io_err(&path))?;

    let path = dir.join("meta.json");
    let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    serde_json::to_writer_pretty(&mut f, &ds.meta).map_err(|e| format_err(&path, e.to_string()))?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(io_err(&path))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let dir = dir.as_ref();
    let path = dir.join("meta.json");
    let file = File::open(&path).map_err(io_err(&path))?;
    let meta: DatasetMeta =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| format_err(&path, e.to_string()))?;
    if meta.format != DATASET_FORMAT {
        return Err(format_err(&path, format!("unsupported format {:?}", meta.format)));
    }
    let cfg = meta.window;

    let path = dir.join("examples.csv");
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
    let mut examples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(&path, e.to_string()))?;
        if rec.len() != meta.x_dim + 2 {
            return Err(format_err(&path, format!("line {line}: expected {} columns", meta.x_dim + 2)));
        }
        let turn = rec[1]
            .parse()
            .map_err(|e| format_err(&path, format!("line {line}: turn: {e}")))?;
        let x = rec
            .iter()
            .skip(2)
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format_err(&path, format!("line {line}: {e}")))?;
        examples.push(Example {
            conv_id: rec[0].to_string(),
            turn,
            x,
            targets: vec![None; cfg.n_targets()],
        });
    }

    let path = dir.join("targets.csv");
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
    let index: std::collections::HashMap<(String, usize), usize> = examples
        .iter()
        .enumerate()
        .map(|(i, e)| ((e.conv_id.clone(), e.turn), i))
        .collect();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(&path, e.to_string()))?;
        let bad = |m: String| format_err(&path, format!("line {line}: {m}"));
        if rec.len() != 5 {
            return Err(bad("expected 5 columns".into()));
        }
        let turn: usize = rec[1].parse().map_err(|e| bad(format!("turn: {e}")))?;
        let slot: u8 = rec[2].parse().map_err(|e| bad(format!("slot: {e}")))?;
        let h: usize = rec[3].parse().map_err(|e| bad(format!("horizon: {e}")))?;
        if slot > 1 || h > cfg.horizon {
            return Err(bad("slot or horizon out of range".into()));
        }
        let &ex = index
            .get(&(rec[0].to_string(), turn))
            .ok_or_else(|| bad("target without example".into()))?;
        let label = match &rec[4] {
            MASK => None,
            name => Some(
                meta.class_order
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| bad(format!("unknown class {name:?}")))?,
            ),
        };
        examples[ex].targets[cfg.target_index(slot, h)] = label;
    }
    Ok(Dataset { meta, examples })
}
