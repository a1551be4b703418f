//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// Class index order is fixed everywhere: weights, probability vectors and
/// confusion matrices are all indexed `(clean, offensive, hate)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Clean = 0,
    Offensive = 1,
    Hate = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [ClassLabel::Clean, ClassLabel::Offensive, ClassLabel::Hate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Clean => "clean",
            ClassLabel::Offensive => "offensive",
            ClassLabel::Hate => "hate",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clean" | "0" => Ok(ClassLabel::Clean),
            "offensive" | "1" => Ok(ClassLabel::Offensive),
            "hate" | "2" => Ok(ClassLabel::Hate),
            other => Err(Error::invalid(format!("unknown class label `{other}`"))),
        }
    }
}

/// Per-class multipliers of the weighted cross-entropy loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights([f64; NUM_CLASSES]);

impl ClassWeights {
    /// Weights reported for the original (clean, offensive, hate) imbalance.
    pub const DEFAULT: ClassWeights = ClassWeights([0.09, 0.95, 0.96]);
    pub const UNIFORM: ClassWeights = ClassWeights([1.0, 1.0, 1.0]);

    pub fn new(weights: [f64; NUM_CLASSES]) -> Result<Self> {
        if weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(ClassWeights(weights))
        } else {
            Err(Error::invalid(format!(
                "class weights must be positive and finite, got {weights:?}"
            )))
        }
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        self.0[label.index()]
    }

    pub fn as_array(&self) -> [f64; NUM_CLASSES] {
        self.0
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl FromStr for ClassWeights {
    type Err = Error;

    /// Parses `0.09,0.95,0.96`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != NUM_CLASSES {
            return Err(Error::invalid(format!("expected 3 comma-separated weights, got `{s}`")));
        }
        let mut w = [0.0; NUM_CLASSES];
        for (slot, part) in w.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::invalid(format!("bad weight `{part}`")))?;
        }
        ClassWeights::new(w)
    }
}

/// A classifier's output distribution over the three classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTriple(pub [f64; NUM_CLASSES]);

impl ProbabilityTriple {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self> {
        let t = ProbabilityTriple(p);
        if t.is_valid() {
            Ok(t)
        } else {
            Err(Error::invalid(format!("not a probability triple: {p:?}")))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|p| p.is_finite() && *p >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= Self::TOLERANCE
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        self.0[label.index()]
    }

    /// Argmax with ties resolved toward the more severe class
    /// (hate > offensive > clean).
    pub fn argmax(&self) -> ClassLabel {
        let mut best = ClassLabel::Hate;
        for label in [ClassLabel::Offensive, ClassLabel::Clean] {
            if self.get(label) > self.get(best) {
                best = label;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledComment {
    pub id: String,
    pub text: String,
    pub label: ClassLabel,
}

impl LabeledComment {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: ClassLabel) -> Self {
        LabeledComment {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_severe_class_on_ties() {
        assert_eq!(ProbabilityTriple([0.9, 0.05, 0.05]).argmax(), ClassLabel::Clean);
        assert_eq!(ProbabilityTriple([0.4, 0.4, 0.2]).argmax(), ClassLabel::Offensive);
        assert_eq!(ProbabilityTriple([0.2, 0.4, 0.4]).argmax(), ClassLabel::Hate);
        assert_eq!(ProbabilityTriple([1.0 / 3.0; 3]).argmax(), ClassLabel::Hate);
    }

    #[test]
    fn weights_parse_and_validate() {
        let w: ClassWeights = "0.09,0.95,0.96".parse().unwrap();
        assert_eq!(w, ClassWeights::DEFAULT);
        assert!("1,0,1".parse::<ClassWeights>().is_err());
        assert!("1,1".parse::<ClassWeights>().is_err());
    }

    #[test]
    fn labels_round_trip_through_names() {
        for label in ClassLabel::ALL {
            assert_eq!(label.name().parse::<ClassLabel>().unwrap(), label);
            assert_eq!(ClassLabel::from_index(label.index()), Some(label));
        }
    }
}
