use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Categorical emotion as annotated on an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Emotion {
    Happy,
    Excited,
    Sad,
    Neutral,
    Angry,
    Frustrated,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Happy,
        Emotion::Excited,
        Emotion::Sad,
        Emotion::Neutral,
        Emotion::Angry,
        Emotion::Frustrated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Happy => "Happy",
            Emotion::Excited => "Excited",
            Emotion::Sad => "Sad",
            Emotion::Neutral => "Neutral",
            Emotion::Angry => "Angry",
            Emotion::Frustrated => "Frustrated",
        }
    }

    /// Collapses the six-class scheme onto four classes: Excited joins Happy
    /// and Frustrated joins Angry.
    pub fn merge_to_four(self) -> Emotion {
        match self {
            Emotion::Excited => Emotion::Happy,
            Emotion::Frustrated => Emotion::Angry,
            other => other,
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = CorpusError;

    /// Accepts full names (any case) and the IEMOCAP three-letter codes.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "happy" | "hap" => Ok(Emotion::Happy),
            "excited" | "exc" => Ok(Emotion::Excited),
            "sad" => Ok(Emotion::Sad),
            "neutral" | "neu" => Ok(Emotion::Neutral),
            "angry" | "ang" => Ok(Emotion::Angry),
            "frustrated" | "fru" => Ok(Emotion::Frustrated),
            _ => Err(CorpusError::UnknownEmotion(s.to_string())),
        }
    }
}

/// Label scheme. Each scheme fixes a bijection between its classes and
/// `0..class_count()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Six,
    Four,
}

const SIX: [Emotion; 6] = Emotion::ALL;
const FOUR: [Emotion; 4] = [Emotion::Happy, Emotion::Sad, Emotion::Neutral, Emotion::Angry];

impl Scheme {
    pub fn classes(self) -> &'static [Emotion] {
        match self {
            Scheme::Six => &SIX,
            Scheme::Four => &FOUR,
        }
    }

    pub fn class_count(self) -> usize {
        self.classes().len()
    }

    /// Reserved code for "no history available" in encoded emotion windows.
    pub fn no_history_code(self) -> usize {
        self.class_count()
    }

    pub fn class_names(self) -> Vec<String> {
        self.classes().iter().map(|e| e.name().to_string()).collect()
    }

    /// Encodes a label that is valid under this scheme.
    pub fn encode(self, e: Emotion) -> Result<usize, CorpusError> {
        self.classes()
            .iter()
            .position(|&c| c == e)
            .ok_or(CorpusError::LabelNotInScheme { label: e, scheme: self })
    }

    /// Maps a six-class label into this scheme (merging when four-class) and
    /// encodes it.
    pub fn project(self, e: Emotion) -> usize {
        let e = match self {
            Scheme::Six => e,
            Scheme::Four => e.merge_to_four(),
        };
        self.encode(e).expect("projected label is always in scheme")
    }

    pub fn decode(self, code: usize) -> Option<Emotion> {
        self.classes().get(code).copied()
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Six => f.write_str("six"),
            Scheme::Four => f.write_str("four"),
        }
    }
}

impl FromStr for Scheme {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "six" | "6" => Ok(Scheme::Six),
            "four" | "4" => Ok(Scheme::Four),
            _ => Err(CorpusError::UnknownScheme(s.to_string())),
        }
    }
}
