use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Encoded;
use crate::error::{Error, Result};
use crate::nn::{dropout, BiLstm, Bound, Conv1d, Dense, Graph, ParamId, Params, Tensor, Var};
use crate::types::{ProbabilityTriple, NUM_CLASSES};

const MASKED_SCORE: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    TextCnn,
    Vdcnn,
    BiLstm,
    LstmCnn,
    Sarnn,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::TextCnn,
        Architecture::Vdcnn,
        Architecture::BiLstm,
        Architecture::LstmCnn,
        Architecture::Sarnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::TextCnn => "textcnn",
            Architecture::Vdcnn => "vdcnn",
            Architecture::BiLstm => "bilstm",
            Architecture::LstmCnn => "lstmcnn",
            Architecture::Sarnn => "sarnn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown architecture `{s}` (textcnn, vdcnn, bilstm, lstmcnn, sarnn)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub kernels: Vec<usize>,
    pub filters: usize,
    pub vdcnn_channels: usize,
    pub vdcnn_blocks: usize,
    /// Recurrent state width per direction.
    pub hidden: usize,
    pub attention: usize,
    pub head_hidden: usize,
    pub adapter_hidden: usize,
    pub dropout: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            kernels: vec![2, 3, 4, 5],
            filters: 64,
            vdcnn_channels: 64,
            vdcnn_blocks: 4,
            hidden: 128,
            attention: 64,
            head_hidden: 128,
            adapter_hidden: 128,
            dropout: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Identifier of the embedding the model consumes.
    pub embedding: String,
    #[serde(default)]
    pub hyper: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, embedding: impl Into<String>, seed: u64) -> Self {
        ModelConfig {
            architecture,
            embedding: embedding.into(),
            hyper: Hyperparameters::default(),
            seed,
        }
    }

    /// `architecture/embedding`.
    pub fn id(&self) -> String {
        format!("{}/{}", self.architecture, self.embedding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputShape {
    Sequence { max_len: usize, dim: usize },
    Sentence { dim: usize },
}

impl InputShape {
    pub fn of(x: &Encoded) -> InputShape {
        match x {
            Encoded::Sequences { data, .. } => InputShape::Sequence {
                max_len: data.shape()[1],
                dim: data.shape()[2],
            },
            Encoded::Sentences(t) => InputShape::Sentence { dim: t.shape()[1] },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    /// 1×1 convolution matching widths; `None` when the input already has
    /// the block width and the shortcut is the identity.
    pub projection: Option<Conv1d>,
}

impl ResidualBlock {
    fn new(params: &mut Params, name: &str, inputs: usize, width: usize, rng: &mut impl Rng) -> Self {
        ResidualBlock {
            conv1: Conv1d::new(params, &format!("{name}.conv1"), 3, inputs, width, true, rng),
            conv2: Conv1d::new(params, &format!("{name}.conv2"), 3, width, width, true, rng),
            projection: (inputs != width)
                .then(|| Conv1d::new(params, &format!("{name}.proj"), 1, inputs, width, true, rng)),
        }
    }

    /// `shortcut(x) + conv2(relu(conv1(x)))`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.conv1.forward(g, p, x);
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h);
        let shortcut = match &self.projection {
            Some(proj) => proj.forward(g, p, x),
            None => x,
        };
        g.add(shortcut, h)
    }
}

/// Scores `v · tanh(W hₜ + b)` turned into weights by a softmax over the
/// first `lengths[n]` positions of each sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdditiveAttention {
    pub proj: Dense,
    pub v: ParamId,
}

impl AdditiveAttention {
    fn new(params: &mut Params, name: &str, inputs: usize, width: usize, rng: &mut impl Rng) -> Self {
        AdditiveAttention {
            proj: Dense::new(params, &format!("{name}.proj"), inputs, width, rng),
            v: params.add(format!("{name}.v"), Tensor::glorot(width, 1, rng)),
        }
    }

    /// Position weights `[N, L]` for hidden states `[N, L, C]`.
    pub fn weights(&self, g: &mut Graph, p: &Bound, h: Var, lengths: &[usize]) -> Var {
        let s = g.shape(h).to_vec();
        let (n, l, c) = (s[0], s[1], s[2]);
        let flat = g.reshape(h, vec![n * l, c]);
        let e = self.proj.forward(g, p, flat);
        let e = g.tanh(e);
        let scores = g.matmul(e, p[self.v]);
        let scores = g.reshape(scores, vec![n, l]);
        let mut mask = vec![0.0; n * l];
        for (b, &len) in lengths.iter().enumerate() {
            mask[b * l + len.clamp(1, l)..(b + 1) * l].fill(MASKED_SCORE);
        }
        let mask = g.constant(Tensor::new(vec![n, l], mask));
        let scores = g.add(scores, mask);
        g.softmax(scores)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Body {
    TextCnn {
        convs: Vec<Conv1d>,
    },
    Vdcnn {
        blocks: Vec<ResidualBlock>,
        /// Max-pooling (window 2, stride 2) follows this many blocks.
        pool_after: usize,
    },
    BiLstm {
        layers: Vec<BiLstm>,
    },
    LstmCnn {
        lstm: BiLstm,
        convs: Vec<Conv1d>,
    },
    Sarnn {
        first: BiLstm,
        attention: AdditiveAttention,
        second: BiLstm,
    },
    /// Two dense layers over a sentence vector.
    Adapter {
        layers: Vec<Dense>,
    },
}

/// A three-way classifier: one of the five bodies followed by a dense
/// head and a softmax.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classifier {
    config: ModelConfig,
    input: InputShape,
    params: Params,
    body: Body,
    hidden: Dense,
    output: Dense,
}

fn conv_bank(
    params: &mut Params,
    name: &str,
    kernels: &[usize],
    inputs: usize,
    filters: usize,
    rng: &mut impl Rng,
) -> Vec<Conv1d> {
    kernels
        .iter()
        .map(|&k| Conv1d::new(params, &format!("{name}.k{k}"), k, inputs, filters, false, rng))
        .collect()
}

/// Global max over time of every convolution, concatenated.
fn conv_bank_forward(g: &mut Graph, p: &Bound, convs: &[Conv1d], x: Var) -> Var {
    let n = g.shape(x)[0];
    let pooled: Vec<Var> = convs
        .iter()
        .map(|conv| {
            let y = conv.forward(g, p, x);
            let y = g.relu(y);
            let l = g.shape(y)[1];
            let y = g.max_pool_time(y, l, l);
            g.reshape(y, vec![n, conv.out_channels])
        })
        .collect();
    g.concat_last(&pooled)
}

impl Classifier {
    pub fn new(config: ModelConfig, input: InputShape, rng: &mut impl Rng) -> Result<Self> {
        let h = &config.hyper;
        if !(0.0..1.0).contains(&h.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        let mut params = Params::new();
        let (body, width) = match input {
            InputShape::Sentence { dim } => {
                if h.adapter_hidden == 0 {
                    return Err(Error::invalid("adapter width must be positive"));
                }
                let layers = vec![
                    Dense::new(&mut params, "adapter.0", dim, h.adapter_hidden, rng),
                    Dense::new(&mut params, "adapter.1", h.adapter_hidden, h.adapter_hidden, rng),
                ];
                (Body::Adapter { layers }, h.adapter_hidden)
            }
            InputShape::Sequence { max_len, dim } => {
                Self::check_sequence(&config, max_len)?;
                match config.architecture {
                    Architecture::TextCnn => (
                        Body::TextCnn {
                            convs: conv_bank(&mut params, "cnn", &h.kernels, dim, h.filters, rng),
                        },
                        h.kernels.len() * h.filters,
                    ),
                    Architecture::Vdcnn => {
                        let c = h.vdcnn_channels;
                        let blocks = (0..h.vdcnn_blocks)
                            .map(|i| {
                                let inputs = if i == 0 { dim } else { c };
                                ResidualBlock::new(&mut params, &format!("block{i}"), inputs, c, rng)
                            })
                            .collect();
                        (
                            Body::Vdcnn {
                                blocks,
                                pool_after: h.vdcnn_blocks / 2,
                            },
                            c,
                        )
                    }
                    Architecture::BiLstm => {
                        let first = BiLstm::new(&mut params, "lstm0", dim, h.hidden, rng);
                        let second = BiLstm::new(&mut params, "lstm1", first.output_width(), h.hidden, rng);
                        (
                            Body::BiLstm {
                                layers: vec![first, second],
                            },
                            2 * h.hidden,
                        )
                    }
                    Architecture::LstmCnn => {
                        let lstm = BiLstm::new(&mut params, "lstm", dim, h.hidden, rng);
                        let convs = conv_bank(&mut params, "cnn", &h.kernels, lstm.output_width(), h.filters, rng);
                        (Body::LstmCnn { lstm, convs }, h.kernels.len() * h.filters)
                    }
                    Architecture::Sarnn => {
                        let first = BiLstm::new(&mut params, "lstm0", dim, h.hidden, rng);
                        let attention =
                            AdditiveAttention::new(&mut params, "attention", first.output_width(), h.attention, rng);
                        let second = BiLstm::new(&mut params, "lstm1", first.output_width(), h.hidden, rng);
                        (
                            Body::Sarnn {
                                first,
                                attention,
                                second,
                            },
                            2 * h.hidden,
                        )
                    }
                }
            }
        };
        let hidden = Dense::new(&mut params, "head.hidden", width, h.head_hidden, rng);
        let output = Dense::new(&mut params, "head.output", h.head_hidden, NUM_CLASSES, rng);
        Ok(Classifier {
            config,
            input,
            params,
            body,
            hidden,
            output,
        })
    }

    fn check_sequence(config: &ModelConfig, max_len: usize) -> Result<()> {
        let h = &config.hyper;
        match config.architecture {
            Architecture::TextCnn | Architecture::LstmCnn => {
                let largest = h.kernels.iter().copied().max().unwrap_or(0);
                if h.kernels.is_empty() || h.kernels.contains(&0) || h.filters == 0 {
                    return Err(Error::invalid("convolution kernels and filters must be positive"));
                }
                if max_len < largest {
                    return Err(Error::invalid(format!(
                        "max_len {max_len} is smaller than the largest kernel {largest}"
                    )));
                }
            }
            Architecture::Vdcnn => {
                if h.vdcnn_blocks == 0 || h.vdcnn_channels == 0 {
                    return Err(Error::invalid("vdcnn needs at least one block and channel"));
                }
                if max_len < 3 {
                    return Err(Error::invalid(format!(
                        "max_len {max_len} is smaller than the vdcnn kernel 3"
                    )));
                }
            }
            Architecture::BiLstm | Architecture::Sarnn => {}
        }
        if matches!(
            config.architecture,
            Architecture::BiLstm | Architecture::LstmCnn | Architecture::Sarnn
        ) && (h.hidden == 0 || h.attention == 0)
        {
            return Err(Error::invalid("recurrent and attention widths must be positive"));
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn body(&self) -> &Body {
        &self.body
    }

    pub fn id(&self) -> String {
        self.config.id()
    }

    fn check_input(&self, x: &Encoded) -> Result<()> {
        let got = InputShape::of(x);
        if got != self.input {
            return Err(Error::invalid(format!(
                "model {} expects input {:?}, got {:?}",
                self.id(),
                self.input,
                got
            )));
        }
        Ok(())
    }

    /// Output probabilities `[N, 3]` and, for the attention model, the
    /// position weights `[N, L']`. Dropout is active only when `rng` is
    /// given.
    pub fn forward_full(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: &Encoded,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Option<Var>)> {
        self.check_input(x)?;
        let mut alpha = None;
        let features = match (&self.body, x) {
            (Body::Adapter { layers }, Encoded::Sentences(t)) => {
                let mut h = g.constant(t.clone());
                for layer in layers {
                    h = layer.forward(g, p, h);
                    h = g.relu(h);
                }
                h
            }
            (body, Encoded::Sequences { data, lengths }) => {
                let recurrent_only = matches!(body, Body::BiLstm { .. } | Body::Sarnn { .. });
                let input = if recurrent_only {
                    trim_to_longest(data, lengths)
                } else {
                    data.clone()
                };
                let seq = g.constant(input);
                match body {
                    Body::TextCnn { convs } => conv_bank_forward(g, p, convs, seq),
                    Body::Vdcnn { blocks, pool_after } => {
                        let mut h = seq;
                        for (i, block) in blocks.iter().enumerate() {
                            if i == *pool_after && i > 0 && g.shape(h)[1] >= 2 {
                                h = g.max_pool_time(h, 2, 2);
                            }
                            h = block.forward(g, p, h);
                        }
                        let n = g.shape(h)[0];
                        let l = g.shape(h)[1];
                        let c = g.shape(h)[2];
                        let h = g.max_pool_time(h, l, l);
                        g.reshape(h, vec![n, c])
                    }
                    Body::BiLstm { layers } => {
                        let mut h = seq;
                        for layer in layers {
                            h = layer.run(g, p, h, lengths);
                        }
                        g.masked_mean_time(h, lengths)
                    }
                    Body::LstmCnn { lstm, convs } => {
                        let h = lstm.run(g, p, seq, lengths);
                        conv_bank_forward(g, p, convs, h)
                    }
                    Body::Sarnn {
                        first,
                        attention,
                        second,
                    } => {
                        let h = first.run(g, p, seq, lengths);
                        let a = attention.weights(g, p, h, lengths);
                        alpha = Some(a);
                        let l = g.shape(h)[1];
                        let mut counts = Vec::with_capacity(lengths.len() * l);
                        for &len in lengths {
                            counts.extend(std::iter::repeat_n(len.clamp(1, l) as f64, l));
                        }
                        let counts = g.constant(Tensor::new(vec![lengths.len(), l], counts));
                        let w = g.mul(a, counts);
                        let ctx = g.scale_time(h, w);
                        let h2 = second.run(g, p, ctx, lengths);
                        g.masked_mean_time(h2, lengths)
                    }
                    Body::Adapter { .. } => unreachable!("checked by input shape"),
                }
            }
            _ => unreachable!("checked by input shape"),
        };
        let h = self.hidden.forward(g, p, features);
        let h = g.relu(h);
        let h = dropout(g, h, self.config.hyper.dropout, rng);
        let logits = self.output.forward(g, p, h);
        Ok((g.softmax(logits), alpha))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: &Encoded, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        Ok(self.forward_full(g, p, x, rng)?.0)
    }

    /// Inference-mode probabilities, evaluated in chunks of `batch` rows.
    pub fn predict(&self, x: &Encoded, batch: usize) -> Result<Vec<ProbabilityTriple>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(x.len());
        let idx: Vec<usize> = (0..x.len()).collect();
        for chunk in idx.chunks(batch.max(1)) {
            let part = x.select(chunk);
            let mut g = Graph::new();
            let p = self.params.bind(&mut g);
            let probs = self.forward(&mut g, &p, &part, None)?;
            for row in g.value(probs).data().chunks(NUM_CLASSES) {
                out.push(ProbabilityTriple([row[0], row[1], row[2]]));
            }
        }
        Ok(out)
    }

    /// Attention weights over the unpadded positions of each input; `None`
    /// for models without an attention block.
    pub fn attention(&self, x: &Encoded) -> Result<Option<Vec<Vec<f64>>>> {
        if !matches!(self.body, Body::Sarnn { .. }) {
            return Ok(None);
        }
        let lengths = match x {
            Encoded::Sequences { lengths, .. } => lengths.clone(),
            Encoded::Sentences(_) => return Ok(None),
        };
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (_, alpha) = self.forward_full(&mut g, &p, x, None)?;
        let alpha = alpha.expect("attention model");
        let l = g.shape(alpha)[1];
        let data = g.value(alpha).data();
        Ok(Some(
            lengths
                .iter()
                .enumerate()
                .map(|(b, &len)| data[b * l..b * l + len.clamp(1, l)].to_vec())
                .collect(),
        ))
    }
}

/// Drops padding columns past the longest sequence in the batch. Exact for
/// bodies that mask everything beyond each sample's length.
fn trim_to_longest(data: &Tensor, lengths: &[usize]) -> Tensor {
    let (n, l, d) = (data.shape()[0], data.shape()[1], data.shape()[2]);
    let keep = lengths.iter().copied().max().unwrap_or(1).clamp(1, l);
    if keep == l {
        return data.clone();
    }
    let mut out = Vec::with_capacity(n * keep * d);
    for b in 0..n {
        out.extend_from_slice(&data.data()[b * l * d..(b * l + keep) * d]);
    }
    Tensor::new(vec![n, keep, d], out)
}
