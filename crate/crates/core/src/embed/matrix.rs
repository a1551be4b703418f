use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::tokenize::{Vocabulary, PAD, SPECIALS};

/// Vocabulary-indexed dense vectors. Rows of the special tokens are zero,
/// so unknown words and padding embed to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vocabulary,
    dim: usize,
    vectors: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(vocab: Vocabulary, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if vectors.len() != vocab.len() * dim {
            return Err(Error::LengthMismatch {
                what: "embedding rows × dim",
                left: vectors.len(),
                right: vocab.len() * dim,
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains non-finite values"));
        }
        let mut m = EmbeddingMatrix { vocab, dim, vectors };
        m.vectors[..SPECIALS.len() * dim].fill(0.0);
        Ok(m)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.vocab.len()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vector(&self, token: &str) -> &[f32] {
        self.row(self.vocab.index_or_unk(token))
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        cosine(self.vector(a), self.vector(b))
    }

    /// word2vec text format: a `count dim` header, then one word and its
    /// values per line, printed with 9 significant digits (exact for f32).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.vocab.words().len(), self.dim);
        for (i, word) in self.vocab.words().iter().enumerate() {
            out.push_str(word);
            for v in self.row(i + SPECIALS.len()) {
                let _ = write!(out, " {v:.8e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(source: &str, path: &Path) -> Result<Self> {
        let mut lines = source.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing `count dim` header"))?;
        let mut fields = header.split_whitespace();
        let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>()
                    .map_err(|_| Error::parse(path, 1, "bad word count"))?,
                d.parse::<usize>().map_err(|_| Error::parse(path, 1, "bad dimension"))?,
            ),
            _ => return Err(Error::parse(path, 1, "expected `count dim` header")),
        };
        if dim == 0 {
            return Err(Error::parse(path, 1, "dimension must be positive"));
        }
        let mut words = Vec::with_capacity(count);
        let mut vectors = vec![0.0f32; SPECIALS.len() * dim];
        vectors.reserve(count * dim);
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("non-empty line");
            let values: Vec<&str> = fields.collect();
            if values.len() != dim {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            for v in values {
                let x: f32 = v
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, format!("bad float `{v}`")))?;
                if !x.is_finite() {
                    return Err(Error::parse(path, line_no, "non-finite value"));
                }
                vectors.push(x);
            }
            if SPECIALS.contains(&word) {
                return Err(Error::parse(path, line_no, format!("reserved token `{word}`")));
            }
            words.push((line_no, word.to_string()));
        }
        if words.len() != count {
            return Err(Error::parse(
                path,
                source.lines().count(),
                format!("header announces {count} words, found {}", words.len()),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for (line_no, w) in &words {
            if !seen.insert(w.as_str()) {
                return Err(Error::parse(path, *line_no, format!("duplicate word `{w}`")));
            }
        }
        let vocab = Vocabulary::from_tokens(words.into_iter().map(|(_, w)| w))?;
        EmbeddingMatrix::new(vocab, dim, vectors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source, path)
    }

    /// `max_len × dim` rows for `tokens`: truncated at the end, padded with
    /// the PAD row, unknown tokens mapped to the UNK row.
    pub fn embed_sequence<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Tensor {
        let mut data = Vec::with_capacity(max_len * self.dim);
        for t in tokens.iter().take(max_len) {
            data.extend(self.vector(t.as_ref()).iter().map(|&v| v as f64));
        }
        while data.len() < max_len * self.dim {
            data.extend(self.row(PAD).iter().map(|&v| v as f64));
        }
        Tensor::new(vec![max_len, self.dim], data)
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(src: &str) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::parse(src, Path::new("vec.txt"))
    }

    #[test]
    fn parses_word2vec_text() {
        let m = parse("2 3\na 1 2 3\nb 4 5 6").unwrap();
        assert_eq!(m.vocab().words(), &["a", "b"]);
        assert_eq!(m.dim(), 3);
        assert_eq!(m.vector("b"), &[4.0, 5.0, 6.0]);
        assert_eq!(m.vector("zzz"), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn header_dimension_is_respected() {
        let row: Vec<String> = (0..300).map(|i| format!("{}", i as f32 / 300.0)).collect();
        let src = format!("1 300\nx {}\n", row.join(" "));
        assert_eq!(parse(&src).unwrap().dim(), 300);
    }

    #[test]
    fn arity_mismatch_reports_line() {
        let err = parse("1 2\na 1").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_counts() {
        assert!(parse("2 1\na 1\na 2\n").is_err());
        assert!(parse("3 1\na 1\nb 2\n").is_err());
        assert!(parse("1 1\n<unk> 1\n").is_err());
    }

    #[test]
    fn sequences_pad_and_truncate() {
        let m = parse("2 2\na 1 2\nb 3 4").unwrap();
        let t = m.embed_sequence(&["a", "b"], 4);
        assert_eq!(t.shape(), &[4, 2]);
        assert_eq!(t.data(), &[1., 2., 3., 4., 0., 0., 0., 0.]);
        let t = m.embed_sequence(&["b", "nope"], 2);
        assert_eq!(t.data(), &[3., 4., 0., 0.]);
        let t = m.embed_sequence(&["a", "b", "a", "b", "a", "b"], 4);
        assert_eq!(t.data(), &[1., 2., 3., 4., 1., 2., 3., 4.]);
    }

    proptest! {
        #[test]
        fn text_format_round_trips_bit_exactly(
            values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40),
            dim in 1usize..5,
        ) {
            let rows = values.len() / dim;
            prop_assume!(rows > 0);
            let words: Vec<String> = (0..rows).map(|i| format!("w{i}")).collect();
            let vocab = Vocabulary::from_tokens(words).unwrap();
            let mut vectors = vec![0.0f32; SPECIALS.len() * dim];
            vectors.extend_from_slice(&values[..rows * dim]);
            let m = EmbeddingMatrix::new(vocab, dim, vectors).unwrap();
            let back = parse(&m.to_text()).unwrap();
            prop_assert_eq!(back.vocab(), m.vocab());
            let a: Vec<u32> = back.vectors().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = m.vectors().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn embedded_shape_is_fixed(n in 0usize..20, max_len in 1usize..10) {
            let m = parse("1 3\na 1 2 3").unwrap();
            let tokens = vec!["a"; n];
            let t = m.embed_sequence(&tokens, max_len);
            prop_assert_eq!(t.shape(), &[max_len, 3]);
        }
    }
}
