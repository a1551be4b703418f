//! Stacking: sub-models whose dev macro-F1 clears a gate contribute their
//! dev-set probabilities as features for a one-hidden-layer meta-model.

mod predict;
mod stacker;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use predict::{
    predict_ensemble, Ensemble, EnsembleManifest, EnsembleMember, LoadedSubmodel, Prediction, SubmodelPredictor,
};
pub use stacker::{train_stacker, StackerConfig, StackerFit, StackerModel, STACKER_HIDDEN};

use crate::error::{Error, Result};
use crate::types::{ClassLabel, ProbabilityTriple, NUM_CLASSES};

/// Dev-set outcome of one trained (architecture × embedding) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelReport {
    pub id: String,
    pub dev_f1: f64,
    pub sample_ids: Vec<String>,
    pub labels: Vec<ClassLabel>,
    pub dev_probs: Vec<ProbabilityTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
}

impl SubmodelReport {
    pub fn validate(&self) -> Result<()> {
        let n = self.sample_ids.len();
        if self.labels.len() != n || self.dev_probs.len() != n {
            return Err(Error::SampleMismatch(format!(
                "report {} has {} ids, {} labels and {} probability rows",
                self.id,
                n,
                self.labels.len(),
                self.dev_probs.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.dev_f1) {
            return Err(Error::invalid(format!(
                "report {} has F1 {} outside [0, 1]",
                self.id, self.dev_f1
            )));
        }
        if let Some(i) = self.dev_probs.iter().position(|p| !p.is_valid()) {
            return Err(Error::invalid(format!(
                "report {} row {i} is not a distribution",
                self.id
            )));
        }
        Ok(())
    }
}

/// Models with dev macro-F1 strictly above `threshold`, in lexicographic
/// id order.
pub fn select_models(reports: &[SubmodelReport], threshold: f64) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("gate threshold {threshold} outside [0, 1]")));
    }
    let mut ids: Vec<String> = reports
        .iter()
        .filter(|r| r.dev_f1 > threshold)
        .map(|r| r.id.clone())
        .collect();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::NoModelsPassGate { threshold });
    }
    Ok(ids)
}

/// Stacker inputs: one row of `3·M` probabilities per dev sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub model_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<ClassLabel>,
}

impl FeatureSet {
    pub fn width(&self) -> usize {
        NUM_CLASSES * self.model_ids.len()
    }
}

/// Concatenates the selected reports' probability rows in canonical id
/// order. All selected reports must cover the same samples in the same
/// order with the same labels.
pub fn build_features(selected: &[String], reports: &[SubmodelReport]) -> Result<FeatureSet> {
    let mut by_id: BTreeMap<&str, &SubmodelReport> = BTreeMap::new();
    for r in reports {
        if by_id.insert(r.id.as_str(), r).is_some() {
            return Err(Error::invalid(format!("duplicate report id {}", r.id)));
        }
    }
    let mut ids: Vec<String> = selected.to_vec();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::invalid("no models selected"));
    }
    let chosen: Vec<&SubmodelReport> = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("selected model {id} has no report")))
        })
        .collect::<Result<_>>()?;
    for r in &chosen {
        r.validate()?;
    }
    let first = chosen[0];
    for r in &chosen[1..] {
        if r.sample_ids != first.sample_ids {
            return Err(Error::SampleMismatch(format!(
                "{} and {} cover different dev samples or orders",
                first.id, r.id
            )));
        }
        if r.labels != first.labels {
            return Err(Error::SampleMismatch(format!(
                "{} and {} disagree on gold labels",
                first.id, r.id
            )));
        }
    }
    let rows = (0..first.sample_ids.len())
        .map(|i| chosen.iter().flat_map(|r| r.dev_probs[i].0).collect())
        .collect();
    Ok(FeatureSet {
        model_ids: ids,
        sample_ids: first.sample_ids.clone(),
        rows,
        labels: first.labels.clone(),
    })
}

#[cfg(test)]
mod tests;
