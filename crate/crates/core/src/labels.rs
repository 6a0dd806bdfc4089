//! The emotion label alphabet and its canonical class ordering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of trainable emotion classes.
pub const NUM_CLASSES: usize = 8;

/// One of the eight challenge categories, or `X` for "no consensus".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EmotionLabel {
    Anger,
    Contempt,
    Disgust,
    Fear,
    Happiness,
    Neutral,
    Sadness,
    Surprise,
    NoConsensus,
}

/// The canonical index -> label mapping. Every vector and matrix in the
/// crate is laid out in this order.
pub const CLASSES: [EmotionLabel; NUM_CLASSES] = [
    EmotionLabel::Anger,
    EmotionLabel::Contempt,
    EmotionLabel::Disgust,
    EmotionLabel::Fear,
    EmotionLabel::Happiness,
    EmotionLabel::Neutral,
    EmotionLabel::Sadness,
    EmotionLabel::Surprise,
];

/// All nine admissible codes, classes first.
pub const ALL_CODES: [EmotionLabel; NUM_CLASSES + 1] = [
    EmotionLabel::Anger,
    EmotionLabel::Contempt,
    EmotionLabel::Disgust,
    EmotionLabel::Fear,
    EmotionLabel::Happiness,
    EmotionLabel::Neutral,
    EmotionLabel::Sadness,
    EmotionLabel::Surprise,
    EmotionLabel::NoConsensus,
];

impl EmotionLabel {
    pub fn code(self) -> char {
        match self {
            EmotionLabel::Anger => 'A',
            EmotionLabel::Contempt => 'C',
            EmotionLabel::Disgust => 'D',
            EmotionLabel::Fear => 'F',
            EmotionLabel::Happiness => 'H',
            EmotionLabel::Neutral => 'N',
            EmotionLabel::Sadness => 'S',
            EmotionLabel::Surprise => 'U',
            EmotionLabel::NoConsensus => 'X',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "Anger",
            EmotionLabel::Contempt => "Contempt",
            EmotionLabel::Disgust => "Disgust",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Happiness => "Happiness",
            EmotionLabel::Neutral => "Neutral",
            EmotionLabel::Sadness => "Sadness",
            EmotionLabel::Surprise => "Surprise",
            EmotionLabel::NoConsensus => "No consensus",
        }
    }

    /// Position in [`CLASSES`]; `None` for `X`.
    pub fn index(self) -> Option<usize> {
        CLASSES.iter().position(|&c| c == self)
    }

    pub fn from_index(index: usize) -> Option<EmotionLabel> {
        CLASSES.get(index).copied()
    }

    pub fn is_class(self) -> bool {
        self != EmotionLabel::NoConsensus
    }
}

/// Parse a single-letter code, case-insensitively.
pub fn parse_label(text: &str) -> Result<EmotionLabel> {
    let mut chars = text.trim().chars();
    let (Some(c), None) = (chars.next(), chars.next()) else {
        return Err(Error::UnknownLabel(text.to_string()));
    };
    ALL_CODES
        .iter()
        .copied()
        .find(|l| l.code() == c.to_ascii_uppercase())
        .ok_or_else(|| Error::UnknownLabel(text.to_string()))
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_char(self.code())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_label(&s).map_err(serde::de::Error::custom)
    }
}

/// The ordered set of trainable classes carried by model files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    classes: Vec<EmotionLabel>,
}

impl LabelSet {
    pub fn canonical() -> Self {
        LabelSet {
            classes: CLASSES.to_vec(),
        }
    }

    pub fn classes(&self) -> &[EmotionLabel] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Model files must use the canonical ordering.
    pub fn validate(&self) -> Result<()> {
        if self.classes != CLASSES {
            return Err(Error::Malformed(format!(
                "label ordering {:?} differs from the canonical A,C,D,F,H,N,S,U",
                self.classes.iter().map(|c| c.code()).collect::<String>()
            )));
        }
        Ok(())
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::canonical()
    }
}
