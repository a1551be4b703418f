use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StackerModel;
use crate::embed::Featurizer;
use crate::error::{Error, Result};
use crate::models::{Classifier, ModelSnapshot};
use crate::textnorm::{clean, NormalizationConfig, NormalizationSpec};
use crate::types::{ClassLabel, ProbabilityTriple};

const PREDICT_BATCH: usize = 64;

/// Something that maps cleaned texts to class distributions.
pub trait SubmodelPredictor: Sync {
    fn id(&self) -> &str;
    fn predict(&self, cleaned: &[String]) -> Result<Vec<ProbabilityTriple>>;
}

/// A classifier snapshot with the featurizer it was trained on.
#[derive(Debug, Clone)]
pub struct LoadedSubmodel {
    id: String,
    featurizer: Featurizer,
    model: Classifier,
}

impl LoadedSubmodel {
    pub fn new(featurizer: Featurizer, model: Classifier) -> Self {
        LoadedSubmodel {
            id: model.id(),
            featurizer,
            model,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap = ModelSnapshot::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let featurizer = Featurizer::load(&snap.featurizer, base)?;
        Ok(Self::new(featurizer, snap.model))
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }
}

impl SubmodelPredictor for LoadedSubmodel {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, cleaned: &[String]) -> Result<Vec<ProbabilityTriple>> {
        self.model.predict(&self.featurizer.featurize(cleaned), PREDICT_BATCH)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: ProbabilityTriple,
    pub label: ClassLabel,
}

/// Cleans `texts`, runs every sub-model the stacker was trained on, and
/// applies the stacker to the concatenated probabilities. The label is the
/// argmax with ties going to the more severe class.
pub fn predict_ensemble(
    stacker: &StackerModel,
    submodels: &[&dyn SubmodelPredictor],
    texts: &[String],
    normalization: &NormalizationConfig,
) -> Result<Vec<Prediction>> {
    let ordered: Vec<&dyn SubmodelPredictor> = stacker
        .model_ids
        .iter()
        .map(|id| {
            submodels
                .iter()
                .copied()
                .find(|s| s.id() == id)
                .ok_or_else(|| Error::MissingSnapshot(format!("sub-model {id}")))
        })
        .collect::<Result<_>>()?;
    let cleaned: Vec<String> = texts.iter().map(|t| clean(t, normalization)).collect();
    let outputs: Vec<Vec<ProbabilityTriple>> =
        ordered.par_iter().map(|s| s.predict(&cleaned)).collect::<Result<_>>()?;
    for (s, out) in ordered.iter().zip(&outputs) {
        if out.len() != cleaned.len() {
            return Err(Error::LengthMismatch {
                what: "sub-model outputs vs inputs",
                left: out.len(),
                right: cleaned.len(),
            });
        }
        if out.iter().any(|p| !p.is_valid()) {
            return Err(Error::invalid(format!(
                "sub-model {} returned an invalid distribution",
                s.id()
            )));
        }
    }
    let rows: Vec<Vec<f64>> = (0..cleaned.len())
        .map(|i| outputs.iter().flat_map(|o| o[i].0).collect())
        .collect();
    Ok(stacker
        .predict(&rows)?
        .into_iter()
        .map(|probs| Prediction {
            label: probs.argmax(),
            probs,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub id: String,
    pub snapshot: PathBuf,
}

/// Sub-model snapshots, gate threshold and stacker snapshot of a trained
/// ensemble. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub threshold: f64,
    #[serde(default)]
    pub normalization: NormalizationSpec,
    pub models: Vec<EnsembleMember>,
    pub stacker: PathBuf,
}

impl EnsembleManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A loaded manifest, ready for inference.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub manifest: EnsembleManifest,
    normalization: NormalizationConfig,
    stacker: StackerModel,
    submodels: Vec<LoadedSubmodel>,
}

impl Ensemble {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = EnsembleManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let normalization = manifest.normalization.build(base)?;
        let stacker = StackerModel::load(&resolve(base, &manifest.stacker))?;
        let submodels = manifest
            .models
            .iter()
            .map(|m| {
                let loaded = LoadedSubmodel::load(&resolve(base, &m.snapshot))?;
                if loaded.id() != m.id {
                    return Err(Error::invalid(format!(
                        "snapshot {} holds model {}, manifest says {}",
                        m.snapshot.display(),
                        loaded.id(),
                        m.id
                    )));
                }
                Ok(loaded)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            manifest,
            normalization,
            stacker,
            submodels,
        })
    }

    pub fn stacker(&self) -> &StackerModel {
        &self.stacker
    }

    pub fn predict(&self, texts: &[String]) -> Result<Vec<Prediction>> {
        let subs: Vec<&dyn SubmodelPredictor> = self.submodels.iter().map(|s| s as &dyn SubmodelPredictor).collect();
        predict_ensemble(&self.stacker, &subs, texts, &self.normalization)
    }
}
