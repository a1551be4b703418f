use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureSet;
use crate::error::{Error, Result};
use crate::eval::{allocate, f1_macro};
use crate::models::{weighted_ce_loss, weighted_ce_node};
use crate::nn::{Adam, Dense, Graph, Params, Tensor, Var};
use crate::types::{ClassLabel, ClassWeights, ProbabilityTriple, NUM_CLASSES};

pub const STACKER_HIDDEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackerConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Share of the given samples used for fitting; the rest decides early
    /// stopping.
    pub fit_fraction: f64,
    pub seed: u64,
}

impl Default for StackerConfig {
    fn default() -> Self {
        StackerConfig {
            max_epochs: 300,
            patience: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            fit_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Dense `3M → 128 → 3` network over concatenated sub-model probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackerModel {
    pub model_ids: Vec<String>,
    input_width: usize,
    params: Params,
    hidden: Dense,
    output: Dense,
}

impl StackerModel {
    pub fn new(model_ids: Vec<String>, rng: &mut ChaCha8Rng) -> Result<Self> {
        if model_ids.is_empty() {
            return Err(Error::invalid("stacker needs at least one sub-model"));
        }
        let input_width = NUM_CLASSES * model_ids.len();
        let mut params = Params::new();
        let hidden = Dense::new(&mut params, "stacker.hidden", input_width, STACKER_HIDDEN, rng);
        let output = Dense::new(&mut params, "stacker.output", STACKER_HIDDEN, NUM_CLASSES, rng);
        Ok(StackerModel {
            model_ids,
            input_width,
            params,
            hidden,
            output,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    fn check_rows(&self, rows: &[Vec<f64>]) -> Result<()> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != self.input_width {
                return Err(Error::LengthMismatch {
                    what: "stacker feature row width",
                    left: r.len(),
                    right: self.input_width,
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("feature row {i} is not finite")));
            }
        }
        Ok(())
    }

    fn forward(&self, g: &mut Graph, p: &crate::nn::Bound, rows: &[&Vec<f64>]) -> Var {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let x = g.constant(Tensor::new(vec![rows.len(), self.input_width], data));
        let h = self.hidden.forward(g, p, x);
        let h = g.relu(h);
        let logits = self.output.forward(g, p, h);
        g.softmax(logits)
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<ProbabilityTriple>> {
        self.check_rows(rows)?;
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let refs: Vec<&Vec<f64>> = rows.iter().collect();
        let probs = self.forward(&mut g, &p, &refs);
        Ok(g.value(probs)
            .data()
            .chunks(NUM_CLASSES)
            .map(|r| ProbabilityTriple([r[0], r[1], r[2]]))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingSnapshot(path.display().to_string()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: StackerModel = serde_json::from_str(&text)?;
        if model.input_width != NUM_CLASSES * model.model_ids.len() {
            return Err(Error::Serde(format!(
                "{}: stacker width does not match its models",
                path.display()
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct StackerFit {
    pub model: StackerModel,
    /// Macro-F1 of the fitted stacker on every given sample.
    pub fit_f1: f64,
    pub best_holdout_loss: f64,
    pub best_epoch: usize,
}

/// Stratified fit/holdout index split; classes may be missing entirely.
fn fit_split(labels: &[ClassLabel], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    let alloc = allocate(by_class.each_ref().map(Vec::len), fraction);
    let (mut fit, mut hold) = (Vec::new(), Vec::new());
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(rng);
        fit.extend_from_slice(&members[..alloc[c]]);
        hold.extend_from_slice(&members[alloc[c]..]);
    }
    fit.sort_unstable();
    hold.sort_unstable();
    if hold.is_empty() {
        hold = fit.clone();
    }
    (fit, hold)
}

/// Fits the stacker with the weighted loss, early-stopping on a stratified
/// holdout slice of the given samples.
pub fn train_stacker(features: &FeatureSet, weights: &ClassWeights, config: &StackerConfig) -> Result<StackerFit> {
    let n = features.rows.len();
    if features.labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "feature rows vs labels",
            left: n,
            right: features.labels.len(),
        });
    }
    if n < 2 {
        return Err(Error::invalid("stacker needs at least 2 samples"));
    }
    let mut seen = [false; NUM_CLASSES];
    features.labels.iter().for_each(|l| seen[l.index()] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::SingleClass);
    }
    if config.max_epochs == 0 || config.batch_size == 0 || !(config.fit_fraction > 0.0 && config.fit_fraction < 1.0) {
        return Err(Error::invalid("stacker budget is empty or fit fraction outside (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = StackerModel::new(features.model_ids.clone(), &mut rng)?;
    model.check_rows(&features.rows)?;

    let (mut fit, hold) = fit_split(&features.labels, config.fit_fraction, &mut rng);
    let hold_rows: Vec<Vec<f64>> = hold.iter().map(|&i| features.rows[i].clone()).collect();
    let hold_labels: Vec<ClassLabel> = hold.iter().map(|&i| features.labels[i]).collect();

    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut best: Option<(f64, usize, Params)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        fit.shuffle(&mut rng);
        for (bi, chunk) in fit.chunks(config.batch_size).enumerate() {
            let rows: Vec<&Vec<f64>> = chunk.iter().map(|&i| &features.rows[i]).collect();
            let labels: Vec<ClassLabel> = chunk.iter().map(|&i| features.labels[i]).collect();
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let probs = model.forward(&mut g, &p, &rows);
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
            adam.step(&mut model.params, &p, &grads);
        }
        let hold_loss = weighted_ce_loss(&model.predict(&hold_rows)?, &hold_labels, weights)?;
        if best.as_ref().is_none_or(|b| hold_loss < b.0) {
            best = Some((hold_loss, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    let (best_holdout_loss, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    let preds: Vec<ClassLabel> = model.predict(&features.rows)?.iter().map(|p| p.argmax()).collect();
    let fit_f1 = f1_macro(&preds, &features.labels)?;
    Ok(StackerFit {
        model,
        fit_f1,
        best_holdout_loss,
        best_epoch,
    })
}
