//! Space, BPE and lexicon-segmented tokenization plus the shared vocabulary.

mod bpe;
mod segment;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bpe::{learn_bpe, BpeMergeTable, CONTINUATION, END_OF_WORD};
pub use segment::{Lexicon, JOINER};
pub use vocab::{Vocabulary, MASK, PAD, SPECIALS, UNK};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Space,
    Bpe,
    Segmented,
}

impl fmt::Display for TokenizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerKind::Space => "space",
            TokenizerKind::Bpe => "bpe",
            TokenizerKind::Segmented => "segmented",
        })
    }
}

impl FromStr for TokenizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space" => Ok(TokenizerKind::Space),
            "bpe" => Ok(TokenizerKind::Bpe),
            "segmented" | "segment" => Ok(TokenizerKind::Segmented),
            other => Err(Error::invalid(format!("unknown tokenizer `{other}`"))),
        }
    }
}

/// Resources the non-trivial tokenizers need.
#[derive(Debug, Clone, Default)]
pub struct TokenizerResources {
    pub bpe: Option<BpeMergeTable>,
    pub lexicon: Option<Lexicon>,
}

/// A tokenizer bound to its resources.
#[derive(Debug, Clone)]
pub enum Tokenizer {
    Space,
    Bpe(BpeMergeTable),
    Segmented(Lexicon),
}

impl Tokenizer {
    pub fn new(kind: TokenizerKind, resources: &TokenizerResources) -> Result<Self> {
        match kind {
            TokenizerKind::Space => Ok(Tokenizer::Space),
            TokenizerKind::Bpe => resources
                .bpe
                .clone()
                .map(Tokenizer::Bpe)
                .ok_or_else(|| Error::MissingResource("BPE merge table".into())),
            TokenizerKind::Segmented => resources
                .lexicon
                .clone()
                .map(Tokenizer::Segmented)
                .ok_or_else(|| Error::MissingResource("segmentation lexicon".into())),
        }
    }

    pub fn kind(&self) -> TokenizerKind {
        match self {
            Tokenizer::Space => TokenizerKind::Space,
            Tokenizer::Bpe(_) => TokenizerKind::Bpe,
            Tokenizer::Segmented(_) => TokenizerKind::Segmented,
        }
    }

    /// Tokenizes already-cleaned text.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Space => text.split_whitespace().map(String::from).collect(),
            Tokenizer::Bpe(table) => text.split_whitespace().flat_map(|w| table.encode_word(w)).collect(),
            Tokenizer::Segmented(lexicon) => lexicon.segment(text),
        }
    }
}

pub fn tokenize(text: &str, kind: TokenizerKind, resources: &TokenizerResources) -> Result<Vec<String>> {
    Ok(Tokenizer::new(kind, resources)?.tokenize(text))
}
