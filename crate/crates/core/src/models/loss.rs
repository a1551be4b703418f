use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::types::{ClassLabel, ClassWeights, ProbabilityTriple};

/// Probabilities are clipped to at least this before the logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Class-weighted cross-entropy
/// `J = -(1/N) Σᵢ w[yᵢ] · ln(max(ŷᵢ[yᵢ], ε))`.
pub fn weighted_ce_loss(probs: &[ProbabilityTriple], labels: &[ClassLabel], weights: &ClassWeights) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "probability rows vs labels",
            left: probs.len(),
            right: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| weights.get(y) * p.get(y).clamp(PROB_EPS, 1.0).ln())
        .sum();
    Ok(-total / probs.len() as f64)
}

/// Graph form of [`weighted_ce_loss`] over `[N, 3]` probabilities.
pub fn weighted_ce_node(g: &mut Graph, probs: Var, labels: &[ClassLabel], weights: &ClassWeights) -> Var {
    let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let w: Vec<f64> = labels.iter().map(|&l| weights.get(l)).collect();
    g.clipped_nll(probs, &targets, &w, PROB_EPS, labels.len() as f64)
}
