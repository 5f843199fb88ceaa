//! Pairing diarized utterances into speaker turns.
//!
//! Consecutive utterances by the same speaker form a run. Runs alternate
//! between the two speakers, and runs `2i` and `2i + 1` together make turn `i`.
//! Slot 0 is always the speaker who opens the conversation. A trailing
//! unpaired run yields a final turn whose slot-1 side is absent.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AvdTriple, Conversation, Emotion, FeatureKey, UtteranceRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TurnError {
    #[error("conversation {0} has no utterances")]
    Empty(String),
}

/// One speaker's contribution to a turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTurnSide {
    pub slot: u8,
    pub speaker: String,
    pub utt_ids: Vec<String>,
    pub merged_text: String,
    pub label: Option<Emotion>,
    pub avd: Option<AvdTriple>,
}

impl SpeakerTurnSide {
    fn absent(slot: u8, speaker: String) -> Self {
        SpeakerTurnSide {
            slot,
            speaker,
            utt_ids: Vec::new(),
            merged_text: String::new(),
            label: None,
            avd: None,
        }
    }

    fn from_run(slot: u8, run: &[UtteranceRecord]) -> Self {
        let (label, avd) = lift_labels(run);
        SpeakerTurnSide {
            slot,
            speaker: run[0].speaker.clone(),
            utt_ids: run.iter().map(|r| r.utt_id.clone()).collect(),
            merged_text: concat_text(run),
            label: Some(label),
            avd,
        }
    }

    pub fn present(&self) -> bool {
        !self.utt_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub conv_id: String,
    pub turn_index: usize,
    pub sides: [SpeakerTurnSide; 2],
}

impl Turn {
    pub fn key(&self, slot: u8) -> FeatureKey {
        FeatureKey::new(&self.conv_id, self.turn_index, slot)
    }
}

/// Maximal same-speaker blocks, in time order.
pub fn runs(records: &[UtteranceRecord]) -> Vec<&[UtteranceRecord]> {
    records
        .chunk_by(|a, b| a.speaker == b.speaker)
        .collect()
}

pub fn assemble_turns(conv: &Conversation) -> Result<Vec<Turn>, TurnError> {
    if conv.records.is_empty() {
        return Err(TurnError::Empty(conv.conv_id.clone()));
    }
    let runs = runs(&conv.records);
    let second_speaker = conv
        .records
        .iter()
        .find(|r| r.speaker != conv.records[0].speaker)
        .map(|r| r.speaker.clone())
        .unwrap_or_default();
    Ok(runs
        .chunks(2)
        .enumerate()
        .map(|(turn_index, pair)| {
            let first = SpeakerTurnSide::from_run(0, pair[0]);
            let second = match pair.get(1) {
                Some(run) => SpeakerTurnSide::from_run(1, run),
                None => SpeakerTurnSide::absent(1, second_speaker.clone()),
            };
            Turn {
                conv_id: conv.conv_id.clone(),
                turn_index,
                sides: [first, second],
            }
        })
        .collect())
}

/// Lifts a single-speaker run to one label and one AVD triple.
///
/// The label is the mode of the utterance labels. Ties go to the tied label
/// carried by the longest utterance, and then to the earliest such utterance.
/// AVD is the duration-weighted mean over utterances that carry one.
pub fn lift_labels(run: &[UtteranceRecord]) -> (Emotion, Option<AvdTriple>) {
    assert!(!run.is_empty(), "lift_labels needs a non-empty run");
    let mut counts = [0usize; 6];
    for r in run {
        counts[r.emotion as usize] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    let tied: Vec<Emotion> = Emotion::ALL
        .into_iter()
        .filter(|e| counts[*e as usize] == best)
        .collect();
    let label = if tied.len() == 1 {
        tied[0]
    } else {
        // max_by keeps the last maximum, so scan in reverse to keep the earliest.
        run.iter()
            .rev()
            .filter(|r| tied.contains(&r.emotion))
            .max_by(|a, b| a.duration().total_cmp(&b.duration()))
            .map(|r| r.emotion)
            .expect("tied labels come from the run")
    };

    let mut weight = 0.0;
    let mut acc = [0.0; 3];
    for r in run {
        if let Some(avd) = r.avd {
            let d = r.duration();
            weight += d;
            for (a, v) in acc.iter_mut().zip(avd.components()) {
                *a += d * v;
            }
        }
    }
    let avd = (weight > 0.0).then(|| AvdTriple::from(acc.map(|a| a / weight)));
    (label, avd)
}

/// Joins utterance texts in time order with single spaces; null texts are
/// skipped.
pub fn concat_text(run: &[UtteranceRecord]) -> String {
    run.iter()
        .filter_map(|r| r.text.as_deref())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Every `(conv_id, turn, slot)` key with a present side.
pub fn present_keys<'a>(turns: impl IntoIterator<Item = &'a Turn>) -> BTreeSet<FeatureKey> {
    turns
        .into_iter()
        .flat_map(|t| t.sides.iter().filter(|s| s.present()).map(move |s| t.key(s.slot)))
        .collect()
}

/// Audit dump: `conv_id,turn,slot,speaker,n_utts,label`.
pub fn write_turn_dump<W: Write>(w: W, turns: &[Turn]) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(["conv_id", "turn", "slot", "speaker", "n_utts", "label"])?;
    for t in turns {
        for s in &t.sides {
            wtr.write_record([
                t.conv_id.clone(),
                t.turn_index.to_string(),
                s.slot.to_string(),
                s.speaker.clone(),
                s.utt_ids.len().to_string(),
                s.label.map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
