use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, InputShape, ModelConfig};
use super::loss::{weighted_ce_loss, weighted_ce_node};
use crate::embed::{Encoded, FeaturizerSpec};
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, Params};
use crate::types::{ClassLabel, ClassWeights, ProbabilityTriple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainBudget {
    pub max_epochs: usize,
    /// Epochs without dev-loss improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainBudget {
    fn default() -> Self {
        TrainBudget {
            max_epochs: 30,
            patience: 5,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Parameters from the epoch with the lowest dev loss.
    pub model: Classifier,
    pub best_dev_loss: f64,
    /// 1-based epoch of the snapshot.
    pub best_epoch: usize,
    pub initial_dev_loss: f64,
    pub dev_losses: Vec<f64>,
    pub dev_probs: Vec<ProbabilityTriple>,
}

fn check_pair(x: &Encoded, labels: &[ClassLabel], what: &'static str) -> Result<()> {
    if x.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what,
            left: x.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid(format!("{what}: empty set")));
    }
    Ok(())
}

/// Weighted loss of `model` on a labelled set.
pub fn evaluate_loss(
    model: &Classifier,
    x: &Encoded,
    labels: &[ClassLabel],
    weights: &ClassWeights,
    batch: usize,
) -> Result<(f64, Vec<ProbabilityTriple>)> {
    let probs = model.predict(x, batch)?;
    Ok((weighted_ce_loss(&probs, labels, weights)?, probs))
}

/// Mini-batch Adam on the weighted loss, keeping the parameters of the
/// epoch with the lowest dev loss.
pub fn train_model(
    config: &ModelConfig,
    train: (&Encoded, &[ClassLabel]),
    dev: (&Encoded, &[ClassLabel]),
    weights: &ClassWeights,
    budget: &TrainBudget,
) -> Result<TrainedModel> {
    check_pair(train.0, train.1, "training inputs vs labels")?;
    check_pair(dev.0, dev.1, "dev inputs vs labels")?;
    if budget.max_epochs == 0 || budget.batch_size == 0 {
        return Err(Error::invalid(
            "training budget needs at least one epoch and a positive batch size",
        ));
    }
    if InputShape::of(train.0) != InputShape::of(dev.0) {
        return Err(Error::invalid("training and dev inputs have different shapes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Classifier::new(config.clone(), InputShape::of(train.0), &mut rng)?;
    let mut adam = Adam::new(model.params(), budget.learning_rate);

    let (initial_dev_loss, _) = evaluate_loss(&model, dev.0, dev.1, weights, budget.batch_size)?;
    let mut best: Option<(f64, usize, Params, Vec<ProbabilityTriple>)> = None;
    let mut dev_losses = Vec::new();
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.1.len()).collect();
    for epoch in 1..=budget.max_epochs {
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(budget.batch_size).enumerate() {
            let x = train.0.select(chunk);
            let labels: Vec<ClassLabel> = chunk.iter().map(|&i| train.1[i]).collect();
            let mut g = Graph::new();
            let p = model.params().bind(&mut g);
            let probs = model.forward(&mut g, &p, &x, Some(&mut rng))?;
            let loss = weighted_ce_node(&mut g, probs, &labels, weights);
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    value,
                });
            }
            let grads = g.backward(loss);
            adam.step(model.params_mut(), &p, &grads);
        }
        if !model.params().tensors().iter().all(|t| t.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(budget.batch_size),
                value: f64::NAN,
            });
        }
        let (dev_loss, probs) = evaluate_loss(&model, dev.0, dev.1, weights, budget.batch_size)?;
        if !dev_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                value: dev_loss,
            });
        }
        dev_losses.push(dev_loss);
        if best.as_ref().is_none_or(|b| dev_loss < b.0) {
            best = Some((dev_loss, epoch, model.params().clone(), probs));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > budget.patience {
                break;
            }
        }
    }
    let (best_dev_loss, best_epoch, params, dev_probs) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    Ok(TrainedModel {
        model,
        best_dev_loss,
        best_epoch,
        initial_dev_loss,
        dev_losses,
        dev_probs,
    })
}

const SNAPSHOT_FORMAT: &str = "vihsd-classifier";
const SNAPSHOT_VERSION: u32 = 1;

/// Self-describing model file: configuration, input shape, parameters, the
/// dev loss it was selected at, and a reference to the featurizer that
/// produces its inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format: String,
    pub version: u32,
    pub best_dev_loss: f64,
    pub featurizer: FeaturizerSpec,
    pub model: Classifier,
}

impl ModelSnapshot {
    pub fn new(model: Classifier, best_dev_loss: f64, featurizer: FeaturizerSpec) -> Self {
        ModelSnapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            best_dev_loss,
            featurizer,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingSnapshot(path.display().to_string()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snap: ModelSnapshot = serde_json::from_str(&text)?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(Error::Serde(format!(
                "{}: not a version {SNAPSHOT_VERSION} classifier snapshot",
                path.display()
            )));
        }
        Ok(snap)
    }
}
