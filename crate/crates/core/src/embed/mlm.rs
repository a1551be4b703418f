use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Bound, Dense, Graph, ParamId, Params, Tensor, Var};
use crate::tokenize::{Vocabulary, MASK, PAD, SPECIALS};

const LN_EPS: f64 = 1e-5;
const INIT_BOUND: f64 = 0.05;
const MASKED_SCORE: f64 = -1e9;
const MIN_SENTENCES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_prob: f64,
    pub holdout_fraction: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 256,
            layers: 2,
            heads: 4,
            ff_dim: 512,
            max_len: 64,
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            mask_prob: 0.15,
            holdout_fraction: 0.1,
            min_count: 1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid("encoder dim must be a positive multiple of heads"));
        }
        if self.ff_dim == 0 || self.max_len == 0 || self.batch_size == 0 {
            return Err(Error::invalid("encoder sizes must be positive"));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::invalid("mask_prob must lie in (0, 1)"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::invalid("holdout_fraction must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Block {
    query: Dense,
    key: Dense,
    value: Dense,
    out: Dense,
    ln1: (ParamId, ParamId),
    ff1: Dense,
    ff2: Dense,
    ln2: (ParamId, ParamId),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layout {
    tokens: ParamId,
    positions: ParamId,
    ln0: (ParamId, ParamId),
    blocks: Vec<Block>,
    head: Dense,
}

fn layer_norm_params(params: &mut Params, name: &str, dim: usize) -> (ParamId, ParamId) {
    (
        params.add(format!("{name}.gamma"), Tensor::filled(vec![dim], 1.0)),
        params.add(format!("{name}.beta"), Tensor::zeros(vec![dim])),
    )
}

/// Masked-token pretraining history, measured on a held-out slice with
/// fixed masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmReport {
    pub initial_holdout_loss: f64,
    pub holdout_losses: Vec<f64>,
    pub train_losses: Vec<f64>,
}

impl MlmReport {
    pub fn final_holdout_loss(&self) -> f64 {
        self.holdout_losses.last().copied().unwrap_or(self.initial_holdout_loss)
    }
}

/// Small transformer encoder pretrained by masked-token prediction. A
/// sentence is represented by the mean of its final hidden states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceEncoder {
    config: EncoderConfig,
    vocab: Vocabulary,
    params: Params,
    layout: Layout,
}

struct MaskedBatch {
    ids: Vec<Vec<usize>>,
    rows: Vec<usize>,
    targets: Vec<usize>,
}

impl SentenceEncoder {
    pub fn new(vocab: Vocabulary, config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut params = Params::new();
        let tokens = params.add("embed.tokens", Tensor::uniform(vec![vocab.len(), d], INIT_BOUND, rng));
        let positions = params.add(
            "embed.positions",
            Tensor::uniform(vec![config.max_len, d], INIT_BOUND, rng),
        );
        let ln0 = layer_norm_params(&mut params, "embed.ln", d);
        let blocks = (0..config.layers)
            .map(|i| {
                let n = |s: &str| format!("block{i}.{s}");
                Block {
                    query: Dense::new(&mut params, &n("query"), d, d, rng),
                    key: Dense::new(&mut params, &n("key"), d, d, rng),
                    value: Dense::new(&mut params, &n("value"), d, d, rng),
                    out: Dense::new(&mut params, &n("out"), d, d, rng),
                    ln1: layer_norm_params(&mut params, &n("ln1"), d),
                    ff1: Dense::new(&mut params, &n("ff1"), d, config.ff_dim, rng),
                    ff2: Dense::new(&mut params, &n("ff2"), config.ff_dim, d, rng),
                    ln2: layer_norm_params(&mut params, &n("ln2"), d),
                }
            })
            .collect();
        let head = Dense::new(&mut params, "mlm.head", d, vocab.len(), rng);
        Ok(SentenceEncoder {
            config,
            vocab,
            params,
            layout: Layout {
                tokens,
                positions,
                ln0,
                blocks,
                head,
            },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .take(self.config.max_len)
            .map(|t| self.vocab.index_or_unk(t.as_ref()))
            .collect()
    }

    /// Final hidden states `[B·L, D]` for non-empty id sequences padded to
    /// the longest one.
    fn hidden(&self, g: &mut Graph, p: &Bound, batch: &[Vec<usize>]) -> (Var, usize) {
        let d = self.config.dim;
        let h = self.config.heads;
        let dh = d / h;
        let b = batch.len();
        let l = batch.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let mut tok = Vec::with_capacity(b * l);
        let mut pos = Vec::with_capacity(b * l);
        for seq in batch {
            for t in 0..l {
                tok.push(seq.get(t).copied().unwrap_or(PAD));
                pos.push(t);
            }
        }
        let mut mask = vec![0.0; b * h * l * l];
        for (bi, seq) in batch.iter().enumerate() {
            for hi in 0..h {
                for i in 0..l {
                    let row = ((bi * h + hi) * l + i) * l;
                    mask[row + seq.len().max(1)..row + l].fill(MASKED_SCORE);
                }
            }
        }
        let mask = g.constant(Tensor::new(vec![b * h, l, l], mask));

        let lay = &self.layout;
        let te = g.gather_rows(p[lay.tokens], &tok);
        let pe = g.gather_rows(p[lay.positions], &pos);
        let x = g.add(te, pe);
        let mut x = g.layer_norm(x, p[lay.ln0.0], p[lay.ln0.1], LN_EPS);

        let split = |g: &mut Graph, v: Var| {
            let v = g.reshape(v, vec![b, l, h, dh]);
            let v = g.permute(v, &[0, 2, 1, 3]);
            g.reshape(v, vec![b * h, l, dh])
        };
        for blk in &lay.blocks {
            let q = blk.query.forward(g, p, x);
            let k = blk.key.forward(g, p, x);
            let v = blk.value.forward(g, p, x);
            let (q, k, v) = (split(g, q), split(g, k), split(g, v));
            let scores = g.bmm(q, k, false, true);
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let scores = g.add(scores, mask);
            let att = g.softmax(scores);
            let ctx = g.bmm(att, v, false, false);
            let ctx = g.reshape(ctx, vec![b, h, l, dh]);
            let ctx = g.permute(ctx, &[0, 2, 1, 3]);
            let ctx = g.reshape(ctx, vec![b * l, d]);
            let attn = blk.out.forward(g, p, ctx);
            let r = g.add(x, attn);
            x = g.layer_norm(r, p[blk.ln1.0], p[blk.ln1.1], LN_EPS);
            let f = blk.ff1.forward(g, p, x);
            let f = g.gelu(f);
            let f = blk.ff2.forward(g, p, f);
            let r = g.add(x, f);
            x = g.layer_norm(r, p[blk.ln2.0], p[blk.ln2.1], LN_EPS);
        }
        (x, l)
    }

    fn masked_loss(&self, g: &mut Graph, p: &Bound, batch: &MaskedBatch) -> Var {
        let (x, l) = self.hidden(g, p, &batch.ids);
        // Rows were recorded against the unpadded layout; remap to width `l`.
        let rows: Vec<usize> = batch
            .rows
            .iter()
            .map(|&r| (r / self.config.max_len) * l + r % self.config.max_len)
            .collect();
        let picked = g.gather_rows(x, &rows);
        let logits = self.layout.head.forward(g, p, picked);
        let logp = g.log_softmax(logits);
        let ones = vec![1.0; batch.targets.len()];
        g.log_nll(logp, &batch.targets, &ones, batch.targets.len() as f64)
    }

    fn mask_batch(&self, seqs: &[&Vec<usize>], rng: &mut impl Rng) -> MaskedBatch {
        let stride = self.config.max_len;
        let mut out = MaskedBatch {
            ids: Vec::with_capacity(seqs.len()),
            rows: Vec::new(),
            targets: Vec::new(),
        };
        for (bi, seq) in seqs.iter().enumerate() {
            let n = seq.len();
            let m = ((self.config.mask_prob * n as f64).round() as usize).clamp(1, n);
            let mut ids = (*seq).clone();
            let mut picks = index::sample(rng, n, m).into_vec();
            picks.sort_unstable();
            for t in picks {
                out.rows.push(bi * stride + t);
                out.targets.push(ids[t]);
                ids[t] = MASK;
            }
            out.ids.push(ids);
        }
        out
    }

    fn evaluate(&self, batches: &[MaskedBatch]) -> f64 {
        let (mut total, mut count) = (0.0, 0usize);
        for batch in batches {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g);
            let loss = self.masked_loss(&mut g, &p, batch);
            total += g.value(loss).data()[0] * batch.targets.len() as f64;
            count += batch.targets.len();
        }
        total / count.max(1) as f64
    }

    /// Mean-pooled final hidden states, one `dim`-vector per input. Empty
    /// inputs map to the zero vector.
    pub fn encode_batch<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Vec<Vec<f64>> {
        let d = self.config.dim;
        let mut out = vec![vec![0.0; d]; sentences.len()];
        let live: Vec<(usize, Vec<usize>)> = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (i, self.ids(s)))
            .filter(|(_, ids)| !ids.is_empty())
            .collect();
        for chunk in live.chunks(self.config.batch_size) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|(_, ids)| ids.clone()).collect();
            let mut g = Graph::new();
            let p = self.params.bind(&mut g);
            let (x, l) = self.hidden(&mut g, &p, &batch);
            let hs = g.value(x).data();
            for (bi, (idx, ids)) in chunk.iter().enumerate() {
                let v = &mut out[*idx];
                for t in 0..ids.len() {
                    let row = &hs[(bi * l + t) * d..(bi * l + t + 1) * d];
                    v.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                let inv = 1.0 / ids.len() as f64;
                v.iter_mut().for_each(|a| *a *= inv);
            }
        }
        out
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let one: Vec<Vec<&str>> = vec![tokens.iter().map(|t| t.as_ref()).collect()];
        self.encode_batch(&one).pop().expect("one input")
    }

    /// The `top_k` most probable non-special replacements for the token at
    /// `position`, by descending probability with index tie-break.
    pub fn propose_masked<S: AsRef<str>>(
        &self,
        tokens: &[S],
        position: usize,
        top_k: usize,
    ) -> Result<Vec<(String, f64)>> {
        let mut ids = self.ids(tokens);
        if position >= ids.len() {
            return Err(Error::invalid(format!(
                "mask position {position} is outside a sequence of {} tokens",
                ids.len()
            )));
        }
        ids[position] = MASK;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (x, _) = self.hidden(&mut g, &p, &[ids]);
        let picked = g.gather_rows(x, &[position]);
        let logits = self.layout.head.forward(&mut g, &p, picked);
        let probs = g.softmax(logits);
        let probs = g.value(probs).data();
        let mut ranked: Vec<usize> = (SPECIALS.len()..self.vocab.len()).collect();
        ranked.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        Ok(ranked
            .into_iter()
            .take(top_k)
            .map(|i| (self.vocab.token(i).expect("in range").to_string(), probs[i]))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let enc: SentenceEncoder = serde_json::from_str(&text)?;
        enc.config.validate()?;
        Ok(enc)
    }
}

/// Pretrains a [`SentenceEncoder`] on tokenized sentences.
pub fn train_mlm_encoder<S: AsRef<str>>(
    corpus: &[Vec<S>],
    config: &EncoderConfig,
) -> Result<(SentenceEncoder, MlmReport)> {
    config.validate()?;
    let vocab = Vocabulary::build(corpus, config.min_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = SentenceEncoder::new(vocab, config.clone(), &mut rng)?;

    let mut seqs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| encoder.ids(s))
        .filter(|ids| !ids.is_empty())
        .collect();
    if seqs.len() < MIN_SENTENCES {
        return Err(Error::CorpusTooSmall(format!(
            "masked-token pretraining needs at least {MIN_SENTENCES} non-empty sentences, got {}",
            seqs.len()
        )));
    }
    seqs.shuffle(&mut rng);
    let n_hold = ((seqs.len() as f64 * config.holdout_fraction).round() as usize).max(1);
    let train = seqs.split_off(n_hold);
    let holdout = seqs;

    let mut hold_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_4e1d);
    let hold_batches: Vec<MaskedBatch> = holdout
        .chunks(config.batch_size)
        .map(|c| encoder.mask_batch(&c.iter().collect::<Vec<_>>(), &mut hold_rng))
        .collect();

    let initial_holdout_loss = encoder.evaluate(&hold_batches);
    let mut report = MlmReport {
        initial_holdout_loss,
        holdout_losses: Vec::with_capacity(config.epochs),
        train_losses: Vec::with_capacity(config.epochs),
    };
    let mut adam = Adam::new(&encoder.params, config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let seqs: Vec<&Vec<usize>> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = encoder.mask_batch(&seqs, &mut rng);
            let mut g = Graph::new();
            let p = encoder.params.bind(&mut g);
            let loss = encoder.masked_loss(&mut g, &p, &batch);
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    value,
                });
            }
            let grads = g.backward(loss);
            adam.step(&mut encoder.params, &p, &grads);
            total += value * batch.targets.len() as f64;
            count += batch.targets.len();
        }
        report.train_losses.push(total / count.max(1) as f64);
        report.holdout_losses.push(encoder.evaluate(&hold_batches));
    }
    Ok((encoder, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_gradients;

    fn corpus(n: usize) -> Vec<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let subj = ["tôi", "bạn", "anh", "chị"];
        let verb = ["thích", "ghét", "xem", "đọc"];
        let obj = ["phim", "sách", "nhạc", "báo"];
        (0..n)
            .map(|_| {
                let s = subj[rng.gen_range(0..4)];
                let v = verb[rng.gen_range(0..4)];
                let o = obj[rng.gen_range(0..4)];
                format!("{s} {v} {o} này lắm").split(' ').map(String::from).collect()
            })
            .collect()
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            ff_dim: 24,
            max_len: 8,
            epochs: 4,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 5,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn pretraining_lowers_holdout_loss() {
        let (_, report) = train_mlm_encoder(&corpus(200), &small()).unwrap();
        assert!(report.final_holdout_loss() < report.initial_holdout_loss, "{report:?}");
        assert_eq!(report.holdout_losses.len(), 4);
    }

    #[test]
    fn encodings_have_model_width() {
        let (enc, _) = train_mlm_encoder(&corpus(40), &EncoderConfig { epochs: 1, ..small() }).unwrap();
        assert_eq!(enc.encode(&["tôi", "xem", "phim"]).len(), 16);
        let empty: [&str; 0] = [];
        assert_eq!(enc.encode(&empty), vec![0.0; 16]);
        let long: Vec<&str> = vec!["phim"; 30];
        assert_eq!(enc.encode(&long).len(), 16);
    }

    #[test]
    fn batched_and_single_encoding_agree() {
        let (enc, _) = train_mlm_encoder(&corpus(40), &EncoderConfig { epochs: 1, ..small() }).unwrap();
        let sents = vec![vec!["tôi", "xem"], vec!["bạn", "đọc", "sách", "này", "lắm"], vec![]];
        let batched = enc.encode_batch(&sents);
        for (s, b) in sents.iter().zip(&batched) {
            let single = enc.encode(s);
            for (x, y) in single.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn proposals_are_ranked_and_exclude_specials() {
        let (enc, _) = train_mlm_encoder(&corpus(100), &small()).unwrap();
        let props = enc
            .propose_masked(&["tôi", "thích", "phim", "này", "lắm"], 2, 5)
            .unwrap();
        assert_eq!(props.len(), 5);
        for w in props.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        assert!(props.iter().all(|(t, _)| !SPECIALS.contains(&t.as_str())));
        assert!(enc.propose_masked(&["tôi"], 3, 5).is_err());
    }

    #[test]
    fn forced_token_is_proposed_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let fill = ["một", "hai", "ba", "bốn", "năm", "sáu"];
        let corpus: Vec<Vec<String>> = (0..300)
            .map(|_| {
                let mut s: Vec<String> = (0..4).map(|_| fill[rng.gen_range(0..fill.len())].to_string()).collect();
                s[2] = "x".into();
                s
            })
            .collect();
        let (enc, _) = train_mlm_encoder(&corpus, &EncoderConfig { epochs: 6, ..small() }).unwrap();
        let props = enc.propose_masked(&["hai", "ba", "một", "sáu"], 2, 1).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].0, "x");
    }

    #[test]
    fn snapshot_round_trip() {
        let (enc, _) = train_mlm_encoder(&corpus(40), &EncoderConfig { epochs: 1, ..small() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        enc.save(&path).unwrap();
        let back = SentenceEncoder::load(&path).unwrap();
        assert_eq!(back.encode(&["anh", "đọc"]), enc.encode(&["anh", "đọc"]));
    }

    #[test]
    fn rejects_tiny_corpus() {
        assert!(train_mlm_encoder(&corpus(5), &small()).is_err());
    }

    #[test]
    fn masked_loss_gradients_match_differences() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c", "d"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc = SentenceEncoder::new(
            vocab,
            EncoderConfig {
                dim: 8,
                ff_dim: 6,
                max_len: 4,
                ..small()
            },
            &mut rng,
        )
        .unwrap();
        let seqs = [vec![3, 4, 5], vec![6, 3]];
        let batch = enc.mask_batch(&seqs.iter().collect::<Vec<_>>(), &mut rng);
        let mut params = enc.params.clone();
        let results = {
            let enc_ref = &enc;
            check_gradients(
                &mut params,
                |g, p| enc_ref.masked_loss(g, p, &batch),
                40,
                1e-5,
                &mut rng,
            )
        };
        for r in &results {
            assert!(r.rel_error < 1e-5, "{r:?}");
        }
        enc.params = params;
    }
}
