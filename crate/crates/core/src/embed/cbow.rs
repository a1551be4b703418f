use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::tokenize::{Vocabulary, SPECIALS};

const UNIGRAM_POWER: f64 = 0.75;
const TABLE_SIZE: usize = 1 << 20;
const MIN_LR_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CbowOutput {
    pub matrix: EmbeddingMatrix,
    /// Mean negative-sampling loss per target word, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

struct NoiseTable(Vec<u32>);

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(UNIGRAM_POWER)).collect();
        let total: f64 = weights.iter().sum();
        let mut table = Vec::with_capacity(TABLE_SIZE);
        let mut cumulative = 0.0;
        for (i, w) in weights.iter().enumerate() {
            cumulative += w / total;
            let until = ((cumulative * TABLE_SIZE as f64).round() as usize).min(TABLE_SIZE);
            while table.len() < until {
                table.push(i as u32);
            }
        }
        while table.len() < TABLE_SIZE {
            table.push((weights.len() - 1) as u32);
        }
        NoiseTable(table)
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        self.0[rng.gen_range(0..self.0.len())] as usize
    }
}

fn initial_vectors(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let bound = 0.5 / dim as f32;
    let mut v: Vec<f32> = (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect();
    v[..SPECIALS.len() * dim].fill(0.0);
    v
}

/// Continuous bag-of-words with negative sampling.
pub fn train_cbow<S: AsRef<str>>(corpus: &[Vec<S>], config: &CbowConfig) -> Result<CbowOutput> {
    if config.dim == 0 || config.window == 0 {
        return Err(Error::invalid("cbow dimension and window must be positive"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::invalid("cbow learning rate must be positive"));
    }
    let vocab = Vocabulary::build(corpus, config.min_count)?;
    if vocab.is_empty() {
        return Err(Error::CorpusTooSmall("cbow corpus has no words above min_count".into()));
    }
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.get(t.as_ref())).collect::<Vec<_>>())
        .filter(|s: &Vec<usize>| s.len() > 1)
        .collect();
    let total: usize = sentences.iter().map(Vec::len).sum();
    if total < config.window {
        return Err(Error::CorpusTooSmall(format!(
            "cbow corpus has {total} usable tokens, fewer than the window {}",
            config.window
        )));
    }

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input = initial_vectors(vocab.len(), dim, &mut rng);
    let mut output = vec![0.0f32; vocab.len() * dim];

    let mut counts = vec![0u64; vocab.words().len()];
    for s in &sentences {
        for &w in s {
            counts[w - SPECIALS.len()] += 1;
        }
    }
    let noise = NoiseTable::new(&counts);

    let planned = (config.epochs * total).max(1) as f64;
    let mut processed = 0usize;
    let mut hidden = vec![0.0f32; dim];
    let mut grad = vec![0.0f32; dim];
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let mut loss_sum = 0.0f64;
        let mut targets = 0usize;
        for sentence in &sentences {
            for (pos, &target) in sentence.iter().enumerate() {
                let lr = (config.learning_rate * (1.0 - processed as f64 / planned))
                    .max(config.learning_rate * MIN_LR_FRACTION) as f32;
                processed += 1;

                let reach = config.window - rng.gen_range(0..config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach + 1).min(sentence.len());
                let context: Vec<usize> = (lo..hi).filter(|&j| j != pos).map(|j| sentence[j]).collect();
                if context.is_empty() {
                    continue;
                }
                hidden.fill(0.0);
                for &c in &context {
                    for (h, x) in hidden.iter_mut().zip(&input[c * dim..(c + 1) * dim]) {
                        *h += x;
                    }
                }
                let inv = 1.0 / context.len() as f32;
                hidden.iter_mut().for_each(|h| *h *= inv);
                grad.fill(0.0);

                for k in 0..=config.negatives {
                    let (word, label) = if k == 0 {
                        (target, 1.0f32)
                    } else {
                        let w = noise.sample(&mut rng) + SPECIALS.len();
                        if w == target {
                            continue;
                        }
                        (w, 0.0)
                    };
                    let out = &mut output[word * dim..(word + 1) * dim];
                    let score: f32 = hidden.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                    loss_sum -= if label > 0.0 {
                        log_sigmoid(score as f64)
                    } else {
                        log_sigmoid(-score as f64)
                    };
                    let g = (label - sigmoid(score)) * lr;
                    for ((acc, o), h) in grad.iter_mut().zip(out.iter_mut()).zip(&hidden) {
                        *acc += g * *o;
                        *o += g * h;
                    }
                }
                for &c in &context {
                    for (x, g) in input[c * dim..(c + 1) * dim].iter_mut().zip(&grad) {
                        *x += g;
                    }
                }
                targets += 1;
            }
        }
        epoch_losses.push(loss_sum / targets.max(1) as f64);
    }

    let matrix = EmbeddingMatrix::new(vocab, dim, input)?;
    Ok(CbowOutput { matrix, epoch_losses })
}
