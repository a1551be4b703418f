use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
pub const SPECIALS: [&str; 3] = ["<pad>", "<unk>", "<mask>"];

/// Token ↔ index map with the special tokens at indices 0, 1 and 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Specials followed by `tokens` in the given order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::specials_only();
        for t in tokens {
            let t = t.into();
            if vocab.index.contains_key(&t) {
                return Err(Error::invalid(format!("duplicate or reserved token `{t}`")));
            }
            vocab.index.insert(t.clone(), vocab.tokens.len());
            vocab.tokens.push(t);
        }
        Ok(vocab)
    }

    /// Tokens occurring at least `min_count` times, by descending frequency
    /// with lexicographic tie-break.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::invalid("min_count must be at least 1"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for t in sentence {
                let t = t.as_ref();
                if !SPECIALS.contains(&t) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when only the special tokens are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn is_special(index: usize) -> bool {
        index < SPECIALS.len()
    }

    /// Non-special tokens in index order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIALS.len()..]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
