use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textnorm::{clean, NormalizationConfig};
use crate::tokenize::{tokenize, TokenizerKind, TokenizerResources};
use crate::types::{ClassLabel, LabeledComment, NUM_CLASSES};

fn check_lengths(preds: &[ClassLabel], golds: &[ClassLabel]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs gold labels",
            left: preds.len(),
            right: golds.len(),
        });
    }
    Ok(())
}

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[usize; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn get(&self, gold: ClassLabel, pred: ClassLabel) -> usize {
        self.0[gold.index()][pred.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn gold_count(&self, gold: ClassLabel) -> usize {
        self.0[gold.index()].iter().sum()
    }

    pub fn pred_count(&self, pred: ClassLabel) -> usize {
        self.0.iter().map(|row| row[pred.index()]).sum()
    }

    pub fn precision(&self, class: ClassLabel) -> f64 {
        ratio(self.get(class, class), self.pred_count(class))
    }

    pub fn recall(&self, class: ClassLabel) -> f64 {
        ratio(self.get(class, class), self.gold_count(class))
    }

    pub fn f1(&self, class: ClassLabel) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn f1_macro(&self) -> f64 {
        ClassLabel::ALL.iter().map(|&c| self.f1(c)).sum::<f64>() / NUM_CLASSES as f64
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gold\\pred")?;
        for c in ClassLabel::ALL {
            write!(f, "\t{c}")?;
        }
        for g in ClassLabel::ALL {
            write!(f, "\n{g}")?;
            for p in ClassLabel::ALL {
                write!(f, "\t{}", self.get(g, p))?;
            }
        }
        Ok(())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(preds: &[ClassLabel], golds: &[ClassLabel]) -> Result<ConfusionMatrix> {
    check_lengths(preds, golds)?;
    let mut m = ConfusionMatrix::default();
    for (p, g) in preds.iter().zip(golds) {
        m.0[g.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1. Precision, recall and F1 are zero
/// whenever their denominator is zero.
pub fn f1_macro(preds: &[ClassLabel], golds: &[ClassLabel]) -> Result<f64> {
    check_lengths(preds, golds)?;
    if preds.is_empty() {
        return Err(Error::invalid("macro-F1 of an empty prediction set"));
    }
    Ok(confusion(preds, golds)?.f1_macro())
}

/// Among samples with gold `from` predicted as `to`, the fraction whose
/// cleaned, space-tokenized text contains `token`. Zero when there are no
/// such errors.
pub fn token_error_share(
    dataset: &[LabeledComment],
    preds: &[ClassLabel],
    from: ClassLabel,
    to: ClassLabel,
    token: &str,
    config: &NormalizationConfig,
) -> Result<f64> {
    if preds.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs dataset rows",
            left: preds.len(),
            right: dataset.len(),
        });
    }
    let token = clean(token, config);
    if token.is_empty() || token.contains(' ') {
        return Err(Error::invalid("token must be a single non-empty word"));
    }
    let none = TokenizerResources::default();
    let (mut errors, mut hits) = (0usize, 0usize);
    for (row, &pred) in dataset.iter().zip(preds) {
        if row.label != from || pred != to {
            continue;
        }
        errors += 1;
        let tokens = tokenize(&clean(&row.text, config), TokenizerKind::Space, &none)?;
        if tokens.contains(&token) {
            hits += 1;
        }
    }
    Ok(ratio(hits, errors))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub counts: [usize; NUM_CLASSES],
    pub fractions: [f64; NUM_CLASSES],
}

impl DatasetStats {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn class_distribution(dataset: &[LabeledComment]) -> Result<DatasetStats> {
    if dataset.is_empty() {
        return Err(Error::invalid("class distribution of an empty dataset"));
    }
    let mut counts = [0usize; NUM_CLASSES];
    for row in dataset {
        counts[row.label.index()] += 1;
    }
    let n = dataset.len() as f64;
    Ok(DatasetStats {
        counts,
        fractions: counts.map(|c| c as f64 / n),
    })
}
