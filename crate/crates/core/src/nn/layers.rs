//! Parameterized building blocks shared by the classifiers and the encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, Params};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(params: &mut Params, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: params.add(format!("{name}.weight"), Tensor::glorot(inputs, outputs, rng)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(vec![outputs])),
            inputs,
            outputs,
        }
    }

    /// `x · W + b` for `x` of shape `[rows, inputs]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p[self.weight]);
        g.add_bias(y, p[self.bias])
    }
}

/// 1-D convolution over the time axis of `[N, L, C]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Zero-pad so the output keeps the input length.
    pub same: bool,
}

impl Conv1d {
    pub fn new(
        params: &mut Params,
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        same: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel * in_channels;
        Conv1d {
            weight: params.add(format!("{name}.weight"), Tensor::glorot(fan_in, out_channels, rng)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels])),
            kernel,
            in_channels,
            out_channels,
            same,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let n = g.shape(x)[0];
        let (left, right) = if self.same {
            ((self.kernel - 1) / 2, self.kernel / 2)
        } else {
            (0, 0)
        };
        let cols = g.im2col(x, self.kernel, left, right);
        let l_out = g.shape(cols)[0] / n;
        let y = g.matmul(cols, p[self.weight]);
        let y = g.add_bias(y, p[self.bias]);
        g.reshape(y, vec![n, l_out, self.out_channels])
    }
}

/// Single-direction LSTM over `[N, L, C]` with per-sample lengths. Past a
/// sample's length the state is frozen and the emitted output is zero.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(params: &mut Params, name: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut bias = Tensor::zeros(vec![4 * hidden]);
        // forget gate starts open
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Lstm {
            w_input: params.add(format!("{name}.w_input"), Tensor::glorot(inputs, 4 * hidden, rng)),
            w_hidden: params.add(format!("{name}.w_hidden"), Tensor::glorot(hidden, 4 * hidden, rng)),
            bias: params.add(format!("{name}.bias"), bias),
            inputs,
            hidden,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, lengths: &[usize], reverse: bool) -> Var {
        let s = g.shape(x).to_vec();
        let (n, l, c) = (s[0], s[1], s[2]);
        let h_dim = self.hidden;
        let flat = g.reshape(x, vec![n * l, c]);
        let xw = g.matmul(flat, p[self.w_input]);
        let xw = g.add_bias(xw, p[self.bias]);
        let xw = g.reshape(xw, vec![n, l, 4 * h_dim]);

        let mut h = g.constant(Tensor::zeros(vec![n, h_dim]));
        let mut cell = g.constant(Tensor::zeros(vec![n, h_dim]));
        let mut outputs = vec![None; l];
        let order: Vec<usize> = if reverse {
            (0..l).rev().collect()
        } else {
            (0..l).collect()
        };
        for t in order {
            let gx = g.select_time(xw, t);
            let gh = g.matmul(h, p[self.w_hidden]);
            let gates = g.add(gx, gh);
            let i = g.slice_last(gates, 0, h_dim);
            let i = g.sigmoid(i);
            let f = g.slice_last(gates, h_dim, 2 * h_dim);
            let f = g.sigmoid(f);
            let cand = g.slice_last(gates, 2 * h_dim, 3 * h_dim);
            let cand = g.tanh(cand);
            let o = g.slice_last(gates, 3 * h_dim, 4 * h_dim);
            let o = g.sigmoid(o);
            let keep = g.mul(f, cell);
            let write = g.mul(i, cand);
            let c_new = g.add(keep, write);
            let c_act = g.tanh(c_new);
            let h_new = g.mul(o, c_act);

            if lengths.iter().all(|&len| t < len) {
                h = h_new;
                cell = c_new;
                outputs[t] = Some(h);
            } else {
                let mut mask = Tensor::zeros(vec![n, h_dim]);
                let mut inv = Tensor::filled(vec![n, h_dim], 1.0);
                for (b, &len) in lengths.iter().enumerate() {
                    if t < len {
                        mask.data_mut()[b * h_dim..(b + 1) * h_dim].fill(1.0);
                        inv.data_mut()[b * h_dim..(b + 1) * h_dim].fill(0.0);
                    }
                }
                let mask = g.constant(mask);
                let inv = g.constant(inv);
                let h_in = g.mul(h_new, mask);
                let h_keep = g.mul(h, inv);
                h = g.add(h_in, h_keep);
                let c_in = g.mul(c_new, mask);
                let c_keep = g.mul(cell, inv);
                cell = g.add(c_in, c_keep);
                outputs[t] = Some(h_in);
            }
        }
        let outputs: Vec<Var> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
        g.stack_time(&outputs)
    }
}

/// Forward and backward LSTMs with concatenated outputs `[N, L, 2H]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(params: &mut Params, name: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            forward: Lstm::new(params, &format!("{name}.fwd"), inputs, hidden, rng),
            backward: Lstm::new(params, &format!("{name}.bwd"), inputs, hidden, rng),
        }
    }

    pub fn output_width(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn run(&self, g: &mut Graph, p: &Bound, x: Var, lengths: &[usize]) -> Var {
        let f = self.forward.forward(g, p, x, lengths, false);
        let b = self.backward.forward(g, p, x, lengths, true);
        g.concat_last(&[f, b])
    }
}

/// Inverted dropout; identity when `rng` is `None` (inference).
pub fn dropout<R: Rng>(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
    let Some(rng) = rng else {
        return x;
    };
    if rate <= 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = g.constant(Tensor::new(shape, mask));
    g.mul(x, mask)
}
