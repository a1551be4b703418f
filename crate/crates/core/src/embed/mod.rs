//! Word and sentence representations.

mod cbow;
mod featurizer;
mod matrix;
mod mlm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cbow::{train_cbow, CbowConfig, CbowOutput};
pub use featurizer::{Featurizer, FeaturizerSpec};
pub use matrix::{cosine, EmbeddingMatrix};
pub use mlm::{train_mlm_encoder, EncoderConfig, MlmReport, SentenceEncoder};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Where the input representation of a classifier comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Vectors trained on the task corpus with CBOW.
    Cbow,
    /// Vectors read from a word2vec text file.
    Pretrained,
    /// Sentence vectors from the masked-token encoder.
    Mlm,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 3] = [EmbeddingKind::Cbow, EmbeddingKind::Pretrained, EmbeddingKind::Mlm];

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Cbow => "cbow",
            EmbeddingKind::Pretrained => "pretrained",
            EmbeddingKind::Mlm => "mlm",
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmbeddingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown embedding kind `{s}` (cbow, pretrained, mlm)")))
    }
}

/// Encoded classifier inputs for a batch of tokenized documents.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    /// `[N, max_len, dim]` word vectors with the unpadded length of each row.
    Sequences { data: Tensor, lengths: Vec<usize> },
    /// `[N, dim]` sentence vectors.
    Sentences(Tensor),
}

impl Encoded {
    pub fn len(&self) -> usize {
        match self {
            Encoded::Sequences { lengths, .. } => lengths.len(),
            Encoded::Sentences(t) => t.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Encoded {
        match self {
            Encoded::Sequences { data, lengths } => {
                let (l, d) = (data.shape()[1], data.shape()[2]);
                let mut out = Vec::with_capacity(indices.len() * l * d);
                for &i in indices {
                    out.extend_from_slice(&data.data()[i * l * d..(i + 1) * l * d]);
                }
                Encoded::Sequences {
                    data: Tensor::new(vec![indices.len(), l, d], out),
                    lengths: indices.iter().map(|&i| lengths[i]).collect(),
                }
            }
            Encoded::Sentences(t) => {
                let d = t.shape()[1];
                let mut out = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    out.extend_from_slice(t.row(i));
                }
                Encoded::Sentences(Tensor::new(vec![indices.len(), d], out))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum EmbeddingSource {
    Vectors(EmbeddingMatrix),
    Sentence(SentenceEncoder),
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::Vectors(m) => m.dim(),
            EmbeddingSource::Sentence(e) => e.dim(),
        }
    }

    pub fn is_sentence(&self) -> bool {
        matches!(self, EmbeddingSource::Sentence(_))
    }

    pub fn encode<S: AsRef<str>>(&self, docs: &[Vec<S>], max_len: usize) -> Encoded {
        match self {
            EmbeddingSource::Vectors(m) => {
                let mut data = Vec::with_capacity(docs.len() * max_len * m.dim());
                let mut lengths = Vec::with_capacity(docs.len());
                for doc in docs {
                    data.extend(m.embed_sequence(doc, max_len).into_data());
                    lengths.push(doc.len().min(max_len));
                }
                Encoded::Sequences {
                    data: Tensor::new(vec![docs.len(), max_len, m.dim()], data),
                    lengths,
                }
            }
            EmbeddingSource::Sentence(e) => {
                let rows = e.encode_batch(docs);
                let data = rows.into_iter().flatten().collect();
                Encoded::Sentences(Tensor::new(vec![docs.len(), e.dim()], data))
            }
        }
    }
}
