//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its output value; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients for every node that
//! depends on a trainable leaf.

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        g: usize,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    },
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SliceLast {
        a: Var,
        start: usize,
    },
    ConcatLast(Vec<Var>),
    Reshape(Var),
    Permute {
        a: Var,
        axes: Vec<usize>,
    },
    Im2Col {
        a: Var,
        k: usize,
        pad_left: usize,
    },
    MaxPoolTime {
        a: Var,
        argmax: Vec<usize>,
    },
    MaskedMeanTime {
        a: Var,
        lengths: Vec<usize>,
    },
    ScaleTime(Var, Var),
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    SelectTime {
        a: Var,
        t: usize,
    },
    StackTime(Vec<Var>),
    LayerNorm {
        a: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ClippedNll {
        probs: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        eps: f64,
        denom: f64,
    },
    LogNll {
        logp: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        denom: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to graph variables.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }
}

/// `c += op(a) · op(b)` for an `m×k` by `k×n` product, operands and output
/// addressed through explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: callers pass buffers covering every strided index touched by
    // an m×k, k×n and m×n access pattern.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (usize, usize) {
    // strides of the logical rows×cols view of a buffer stored as
    // rows×cols (or cols×rows when transposed)
    if transposed {
        (1, rows)
    } else {
        (cols, 1)
    }
}

fn swap((a, b): (usize, usize)) -> (usize, usize) {
    (b, a)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, o) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (x, y) in row.iter().zip(o.iter_mut()) {
            *y = (x - max).exp();
            sum += *y;
        }
        for y in o.iter_mut() {
            *y /= sum;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul expects 2-D operands");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        assert_eq!(k, sb[0], "matmul inner dimensions differ");
        self.batched_matmul_impl(a, b, 1, m, k, n, false, false, vec![m, n])
    }

    /// Batched product over the leading axis of two 3-D tensors, with
    /// optional transposition of either operand's trailing matrix.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0]);
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        assert_eq!(k, k2, "bmm inner dimensions differ");
        self.batched_matmul_impl(a, b, sa[0], m, k, n, ta, tb, vec![sa[0], m, n])
    }

    #[allow(clippy::too_many_arguments)]
    fn batched_matmul_impl(
        &mut self,
        a: Var,
        b: Var,
        g: usize,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
        shape: Vec<usize>,
    ) -> Var {
        let mut out = vec![0.0; g * m * n];
        {
            let (ad, bd) = (self.data(a), self.data(b));
            for i in 0..g {
                gemm_acc(
                    m,
                    k,
                    n,
                    &ad[i * m * k..],
                    strides(m, k, ta),
                    &bd[i * k * n..],
                    strides(k, n, tb),
                    &mut out[i * m * n..],
                    (n, 1),
                );
            }
        }
        self.push(
            Tensor::new(shape, out),
            Op::MatMul {
                a,
                b,
                g,
                m,
                k,
                n,
                ta,
                tb,
            },
            &[a, b],
        )
    }

    /// Adds a `[n]` bias to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let cols = self.value(a).cols();
        assert_eq!(self.value(bias).len(), cols, "bias width mismatch");
        let b = self.data(bias).to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (x, bb) in row.iter_mut().zip(&b) {
                *x += bb;
            }
        }
        self.push(out, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), Op::Scale(a, c), &[a])
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), op, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let cols = self.value(a).cols();
        let data = softmax_rows(self.data(a), cols);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), Op::Softmax(a), &[a])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let cols = self.value(a).cols();
        let mut data = self.data(a).to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), Op::LogSoftmax(a), &[a])
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        assert!(start < end && end <= cols);
        let w = end - start;
        let mut data = Vec::with_capacity(t.rows() * w);
        for row in t.data().chunks(cols) {
            data.extend_from_slice(&row[start..end]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        self.push(Tensor::new(shape, data), Op::SliceLast { a, start }, &[a])
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        for p in parts {
            assert_eq!(self.value(*p).rows(), rows, "concat row mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(*p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = self.shape(parts[0]).to_vec();
        *shape.last_mut().unwrap() = total;
        self.push(Tensor::new(shape, data), Op::ConcatLast(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = self.value(a).clone().reshaped(shape);
        self.push(t, Op::Reshape(a), &[a])
    }

    /// Transposes axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let in_shape = self.shape(a).to_vec();
        assert_eq!(axes.len(), in_shape.len());
        let out_shape: Vec<usize> = axes.iter().map(|&ax| in_shape[ax]).collect();
        let in_strides = row_major_strides(&in_shape);
        let src = self.data(a);
        let mut data = vec![0.0; src.len()];
        let mut idx = vec![0usize; out_shape.len()];
        for slot in data.iter_mut() {
            let offset: usize = idx.iter().zip(axes).map(|(i, &ax)| i * in_strides[ax]).sum();
            *slot = src[offset];
            increment(&mut idx, &out_shape);
        }
        self.push(
            Tensor::new(out_shape, data),
            Op::Permute { a, axes: axes.to_vec() },
            &[a],
        )
    }

    /// Unfolds `[N, L, C]` into `[N * L_out, k * C]` windows for a 1-D
    /// convolution of width `k`, zero-padding the time axis.
    pub fn im2col(&mut self, a: Var, k: usize, pad_left: usize, pad_right: usize) -> Var {
        let s = self.shape(a).to_vec();
        assert_eq!(s.len(), 3, "im2col expects [N, L, C]");
        let (n, l, c) = (s[0], s[1], s[2]);
        let padded = l + pad_left + pad_right;
        assert!(padded >= k, "sequence shorter than kernel");
        let l_out = padded - k + 1;
        let src = self.data(a);
        let mut data = vec![0.0; n * l_out * k * c];
        for b in 0..n {
            for t in 0..l_out {
                let row = &mut data[(b * l_out + t) * k * c..(b * l_out + t + 1) * k * c];
                for j in 0..k {
                    let pos = t + j;
                    if pos < pad_left || pos - pad_left >= l {
                        continue;
                    }
                    let from = (b * l + pos - pad_left) * c;
                    row[j * c..(j + 1) * c].copy_from_slice(&src[from..from + c]);
                }
            }
        }
        self.push(
            Tensor::new(vec![n * l_out, k * c], data),
            Op::Im2Col { a, k, pad_left },
            &[a],
        )
    }

    /// Max pooling over the time axis of `[N, L, C]`.
    pub fn max_pool_time(&mut self, a: Var, window: usize, stride: usize) -> Var {
        let s = self.shape(a).to_vec();
        assert_eq!(s.len(), 3);
        let (n, l, c) = (s[0], s[1], s[2]);
        assert!(
            window >= 1 && stride >= 1 && l >= window,
            "pool window exceeds sequence"
        );
        let l_out = (l - window) / stride + 1;
        let src = self.data(a);
        let mut data = vec![0.0; n * l_out * c];
        let mut argmax = vec![0usize; n * l_out * c];
        for b in 0..n {
            for t in 0..l_out {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0;
                    for w in 0..window {
                        let at = (b * l + t * stride + w) * c + ch;
                        if src[at] > best {
                            best = src[at];
                            best_at = at;
                        }
                    }
                    let o = (b * l_out + t) * c + ch;
                    data[o] = best;
                    argmax[o] = best_at;
                }
            }
        }
        self.push(
            Tensor::new(vec![n, l_out, c], data),
            Op::MaxPoolTime { a, argmax },
            &[a],
        )
    }

    /// Mean over the first `lengths[n]` time steps of each sample of
    /// `[N, L, C]`; lengths of zero are treated as one.
    pub fn masked_mean_time(&mut self, a: Var, lengths: &[usize]) -> Var {
        let s = self.shape(a).to_vec();
        let (n, l, c) = (s[0], s[1], s[2]);
        assert_eq!(lengths.len(), n);
        let lengths: Vec<usize> = lengths.iter().map(|&x| x.clamp(1, l)).collect();
        let src = self.data(a);
        let mut data = vec![0.0; n * c];
        for b in 0..n {
            let out = &mut data[b * c..(b + 1) * c];
            for t in 0..lengths[b] {
                for (o, x) in out.iter_mut().zip(&src[(b * l + t) * c..(b * l + t + 1) * c]) {
                    *o += x;
                }
            }
            let inv = 1.0 / lengths[b] as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        self.push(Tensor::new(vec![n, c], data), Op::MaskedMeanTime { a, lengths }, &[a])
    }

    /// Multiplies each time step of `[N, L, C]` by the matching `[N, L]` weight.
    pub fn scale_time(&mut self, a: Var, w: Var) -> Var {
        let s = self.shape(a).to_vec();
        let (n, l, c) = (s[0], s[1], s[2]);
        assert_eq!(self.shape(w), &[n, l]);
        let (src, wd) = (self.data(a), self.data(w));
        let mut data = src.to_vec();
        for (nt, row) in data.chunks_mut(c).enumerate() {
            row.iter_mut().for_each(|x| *x *= wd[nt]);
        }
        self.push(Tensor::new(s, data), Op::ScaleTime(a, w), &[a, w])
    }

    /// Rows of a `[V, D]` table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let d = self.value(table).cols();
        let src = self.data(table);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(
            Tensor::new(vec![indices.len(), d], data),
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        )
    }

    /// Time step `t` of `[N, L, C]` as `[N, C]`.
    pub fn select_time(&mut self, a: Var, t: usize) -> Var {
        let s = self.shape(a).to_vec();
        let (n, l, c) = (s[0], s[1], s[2]);
        assert!(t < l);
        let src = self.data(a);
        let mut data = Vec::with_capacity(n * c);
        for b in 0..n {
            data.extend_from_slice(&src[(b * l + t) * c..(b * l + t + 1) * c]);
        }
        self.push(Tensor::new(vec![n, c], data), Op::SelectTime { a, t }, &[a])
    }

    /// Stacks `L` tensors of shape `[N, C]` into `[N, L, C]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Var {
        assert!(!steps.is_empty());
        let s = self.shape(steps[0]).to_vec();
        let (n, c, l) = (s[0], s[1], steps.len());
        let mut data = vec![0.0; n * l * c];
        for (t, v) in steps.iter().enumerate() {
            assert_eq!(self.shape(*v), &[n, c]);
            let src = self.data(*v);
            for b in 0..n {
                data[(b * l + t) * c..(b * l + t + 1) * c].copy_from_slice(&src[b * c..(b + 1) * c]);
            }
        }
        self.push(Tensor::new(vec![n, l, c], data), Op::StackTime(steps.to_vec()), steps)
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let cols = self.value(a).cols();
        let (g, bt) = (self.data(gamma).to_vec(), self.data(beta).to_vec());
        assert!(g.len() == cols && bt.len() == cols);
        let src = self.data(a);
        let mut normalized = vec![0.0; src.len()];
        let mut inv_std = Vec::with_capacity(src.len() / cols);
        let mut data = vec![0.0; src.len()];
        for ((row, nrow), orow) in src
            .chunks(cols)
            .zip(normalized.chunks_mut(cols))
            .zip(data.chunks_mut(cols))
        {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..cols {
                nrow[j] = (row[j] - mean) * is;
                orow[j] = nrow[j] * g[j] + bt[j];
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(
            Tensor::new(shape, data),
            Op::LayerNorm {
                a,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[a, gamma, beta],
        )
    }

    /// `-(1/denom) Σᵢ wᵢ · ln(max(p[i, tᵢ], eps))` over rows of `[N, K]`
    /// probabilities.
    pub fn clipped_nll(&mut self, probs: Var, targets: &[usize], weights: &[f64], eps: f64, denom: f64) -> Var {
        let k = self.value(probs).cols();
        let src = self.data(probs);
        assert_eq!(targets.len(), src.len() / k);
        assert_eq!(weights.len(), targets.len());
        let mut total = 0.0;
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            total += w * src[i * k + t].max(eps).ln();
        }
        self.push(
            Tensor::scalar(-total / denom),
            Op::ClippedNll {
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                eps,
                denom,
            },
            &[probs],
        )
    }

    /// `-(1/denom) Σᵢ wᵢ · logp[i, tᵢ]` over rows of `[N, K]` log-probabilities.
    pub fn log_nll(&mut self, logp: Var, targets: &[usize], weights: &[f64], denom: f64) -> Var {
        let k = self.value(logp).cols();
        let src = self.data(logp);
        assert_eq!(targets.len(), src.len() / k);
        let total: f64 = targets
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (&t, &w))| w * src[i * k + t])
            .sum();
        self.push(
            Tensor::scalar(-total / denom),
            Op::LogNll {
                logp,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                denom,
            },
            &[logp],
        )
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward expects a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backprop(node, &dy, &mut grads);
            // keep intermediate gradients available for inspection
            grads[i] = Some(dy);
        }
        Gradients(grads)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backprop(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                g,
                m,
                k,
                n,
                ta,
                tb,
            } => {
                let (ad, bd) = (self.data(a), self.data(b));
                let (va, vb) = (strides(m, k, ta), strides(k, n, tb));
                if let Some(da) = self.slot(grads, a) {
                    for i in 0..g {
                        // dA' = dC · B'ᵀ
                        gemm_acc(
                            m,
                            n,
                            k,
                            &dy[i * m * n..],
                            (n, 1),
                            &bd[i * k * n..],
                            swap(vb),
                            &mut da[i * m * k..],
                            va,
                        );
                    }
                }
                if let Some(db) = self.slot(grads, b) {
                    for i in 0..g {
                        // dB' = A'ᵀ · dC
                        gemm_acc(
                            k,
                            m,
                            n,
                            &ad[i * m * k..],
                            swap(va),
                            &dy[i * m * n..],
                            (n, 1),
                            &mut db[i * k * n..],
                            vb,
                        );
                    }
                }
            }
            &Op::AddBias(a, bias) => {
                if let Some(da) = self.slot(grads, a) {
                    da.iter_mut().zip(dy).for_each(|(d, g)| *d += g);
                }
                if let Some(db) = self.slot(grads, bias) {
                    let cols = db.len();
                    for row in dy.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(dy).for_each(|(d, g)| *d += g);
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                if let Some(da) = self.slot(grads, a) {
                    for j in 0..dy.len() {
                        da[j] += dy[j] * bd[j];
                    }
                }
                if let Some(db) = self.slot(grads, b) {
                    for j in 0..dy.len() {
                        db[j] += dy[j] * ad[j];
                    }
                }
            }
            &Op::Scale(a, c) => {
                if let Some(da) = self.slot(grads, a) {
                    da.iter_mut().zip(dy).for_each(|(d, g)| *d += g * c);
                }
            }
            &Op::Tanh(a) => {
                if let Some(da) = self.slot(grads, a) {
                    for j in 0..dy.len() {
                        da[j] += dy[j] * (1.0 - y[j] * y[j]);
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if let Some(da) = self.slot(grads, a) {
                    for j in 0..dy.len() {
                        da[j] += dy[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            &Op::Relu(a) => {
                let x = self.data(a);
                if let Some(da) = self.slot(grads, a) {
                    for j in 0..dy.len() {
                        if x[j] > 0.0 {
                            da[j] += dy[j];
                        }
                    }
                }
            }
            &Op::Gelu(a) => {
                let x = self.data(a);
                if let Some(da) = self.slot(grads, a) {
                    for j in 0..dy.len() {
                        da[j] += dy[j] * gelu_grad(x[j]);
                    }
                }
            }
            &Op::Softmax(a) => {
                let cols = node.value.cols();
                if let Some(da) = self.slot(grads, a) {
                    for ((yr, gr), dr) in y.chunks(cols).zip(dy.chunks(cols)).zip(da.chunks_mut(cols)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                        for j in 0..cols {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                let cols = node.value.cols();
                if let Some(da) = self.slot(grads, a) {
                    for ((yr, gr), dr) in y.chunks(cols).zip(dy.chunks(cols)).zip(da.chunks_mut(cols)) {
                        let sum: f64 = gr.iter().sum();
                        for j in 0..cols {
                            dr[j] += gr[j] - yr[j].exp() * sum;
                        }
                    }
                }
            }
            &Op::SliceLast { a, start } => {
                let in_cols = self.value(a).cols();
                let w = node.value.cols();
                if let Some(da) = self.slot(grads, a) {
                    for (r, gr) in dy.chunks(w).enumerate() {
                        let dst = &mut da[r * in_cols + start..r * in_cols + start + w];
                        dst.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::ConcatLast(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(dp) = self.slot(grads, p) {
                        for r in 0..rows {
                            let src = &dy[r * total + offset..r * total + offset + w];
                            dp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    }
                    offset += w;
                }
            }
            &Op::Reshape(a) => {
                if let Some(da) = self.slot(grads, a) {
                    da.iter_mut().zip(dy).for_each(|(d, g)| *d += g);
                }
            }
            Op::Permute { a, axes } => {
                let in_shape = self.shape(*a).to_vec();
                let in_strides = row_major_strides(&in_shape);
                let out_shape = node.value.shape().to_vec();
                if let Some(da) = self.slot(grads, *a) {
                    let mut idx = vec![0usize; out_shape.len()];
                    for g in dy {
                        let offset: usize = idx.iter().zip(axes).map(|(i, &ax)| i * in_strides[ax]).sum();
                        da[offset] += g;
                        increment(&mut idx, &out_shape);
                    }
                }
            }
            &Op::Im2Col { a, k, pad_left } => {
                let s = self.shape(a).to_vec();
                let (n, l, c) = (s[0], s[1], s[2]);
                let l_out = node.value.rows() / n;
                if let Some(da) = self.slot(grads, a) {
                    for b in 0..n {
                        for t in 0..l_out {
                            let row = &dy[(b * l_out + t) * k * c..(b * l_out + t + 1) * k * c];
                            for j in 0..k {
                                let pos = t + j;
                                if pos < pad_left || pos - pad_left >= l {
                                    continue;
                                }
                                let to = (b * l + pos - pad_left) * c;
                                da[to..to + c]
                                    .iter_mut()
                                    .zip(&row[j * c..(j + 1) * c])
                                    .for_each(|(d, g)| *d += g);
                            }
                        }
                    }
                }
            }
            Op::MaxPoolTime { a, argmax } => {
                if let Some(da) = self.slot(grads, *a) {
                    for (g, &at) in dy.iter().zip(argmax) {
                        da[at] += g;
                    }
                }
            }
            Op::MaskedMeanTime { a, lengths } => {
                let s = self.shape(*a).to_vec();
                let (l, c) = (s[1], s[2]);
                if let Some(da) = self.slot(grads, *a) {
                    for (b, &len) in lengths.iter().enumerate() {
                        let inv = 1.0 / len as f64;
                        let gr = &dy[b * c..(b + 1) * c];
                        for t in 0..len {
                            da[(b * l + t) * c..(b * l + t + 1) * c]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(d, g)| *d += g * inv);
                        }
                    }
                }
            }
            &Op::ScaleTime(a, w) => {
                let c = node.value.cols();
                let (ad, wd) = (self.data(a), self.data(w));
                if let Some(da) = self.slot(grads, a) {
                    for (nt, (dr, gr)) in da.chunks_mut(c).zip(dy.chunks(c)).enumerate() {
                        dr.iter_mut().zip(gr).for_each(|(d, g)| *d += g * wd[nt]);
                    }
                }
                if let Some(dw) = self.slot(grads, w) {
                    for (nt, (ar, gr)) in ad.chunks(c).zip(dy.chunks(c)).enumerate() {
                        dw[nt] += ar.iter().zip(gr).map(|(x, g)| x * g).sum::<f64>();
                    }
                }
            }
            Op::GatherRows { table, indices } => {
                let d = node.value.cols();
                if let Some(dt) = self.slot(grads, *table) {
                    for (r, &i) in indices.iter().enumerate() {
                        dt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&dy[r * d..(r + 1) * d])
                            .for_each(|(x, g)| *x += g);
                    }
                }
            }
            &Op::SelectTime { a, t } => {
                let s = self.shape(a).to_vec();
                let (n, l, c) = (s[0], s[1], s[2]);
                if let Some(da) = self.slot(grads, a) {
                    for b in 0..n {
                        da[(b * l + t) * c..(b * l + t + 1) * c]
                            .iter_mut()
                            .zip(&dy[b * c..(b + 1) * c])
                            .for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::StackTime(steps) => {
                let s = node.value.shape();
                let (n, l, c) = (s[0], s[1], s[2]);
                for (t, &v) in steps.iter().enumerate() {
                    if let Some(dv) = self.slot(grads, v) {
                        for b in 0..n {
                            dv[b * c..(b + 1) * c]
                                .iter_mut()
                                .zip(&dy[(b * l + t) * c..(b * l + t + 1) * c])
                                .for_each(|(d, g)| *d += g);
                        }
                    }
                }
            }
            Op::LayerNorm {
                a,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let cols = node.value.cols();
                let gd = self.data(*gamma).to_vec();
                if let Some(dg) = self.slot(grads, *gamma) {
                    for (nr, gr) in normalized.chunks(cols).zip(dy.chunks(cols)) {
                        for j in 0..cols {
                            dg[j] += nr[j] * gr[j];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *beta) {
                    for gr in dy.chunks(cols) {
                        db.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                }
                if let Some(da) = self.slot(grads, *a) {
                    let inv_n = 1.0 / cols as f64;
                    for (r, ((nr, gr), dr)) in normalized
                        .chunks(cols)
                        .zip(dy.chunks(cols))
                        .zip(da.chunks_mut(cols))
                        .enumerate()
                    {
                        let dxhat: Vec<f64> = (0..cols).map(|j| gr[j] * gd[j]).collect();
                        let sum: f64 = dxhat.iter().sum();
                        let dot: f64 = dxhat.iter().zip(nr).map(|(d, x)| d * x).sum();
                        for j in 0..cols {
                            dr[j] += inv_std[r] * (dxhat[j] - inv_n * sum - nr[j] * inv_n * dot);
                        }
                    }
                }
            }
            Op::ClippedNll {
                probs,
                targets,
                weights,
                eps,
                denom,
            } => {
                let k = self.value(*probs).cols();
                let pd = self.data(*probs);
                if let Some(dp) = self.slot(grads, *probs) {
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let p = pd[i * k + t];
                        if p > *eps {
                            dp[i * k + t] -= dy[0] * w / (denom * p);
                        }
                    }
                }
            }
            Op::LogNll {
                logp,
                targets,
                weights,
                denom,
            } => {
                let k = self.value(*logp).cols();
                if let Some(dl) = self.slot(grads, *logp) {
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        dl[i * k + t] -= dy[0] * w / denom;
                    }
                }
            }
        }
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for ax in (0..idx.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < shape[ax] {
            return;
        }
        idx[ax] = 0;
    }
}
