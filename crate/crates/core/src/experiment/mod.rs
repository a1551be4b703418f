//! Configuration-driven end-to-end runs: clean, split, embeddings, per-cell
//! training, gating, stacking and evaluation, with a hashed manifest of
//! every written file.

mod config;
mod run;

use std::fmt;
use std::str::FromStr;

pub use config::{
    AugmentSection, DataSection, EnsembleSection, ExperimentConfig, ExperimentSection, LossSection, SplitSection,
    TokenizeSection,
};
pub use run::{
    run_experiment, sha256_hex, CellResult, EmbeddingResult, ExperimentReport, FileEntry, Manifest, MANIFEST_FILE,
};

use crate::embed::EmbeddingKind;
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::tokenize::TokenizerKind;

/// An embedding source paired with the tokenizer feeding it, written
/// `kind-tokenizer` (e.g. `cbow-bpe`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EmbeddingId {
    pub kind: EmbeddingKind,
    pub tokenizer: TokenizerKind,
}

impl EmbeddingId {
    pub fn needs_lexicon(self) -> bool {
        self.tokenizer == TokenizerKind::Segmented
    }

    pub fn needs_pretrained(self) -> bool {
        self.kind == EmbeddingKind::Pretrained
    }
}

impl fmt::Display for EmbeddingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind, self.tokenizer)
    }
}

impl FromStr for EmbeddingId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, tokenizer) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("embedding `{s}` is not of the form kind-tokenizer")))?;
        Ok(EmbeddingId {
            kind: kind.parse()?,
            tokenizer: tokenizer.parse()?,
        })
    }
}

/// One (architecture × embedding) cell, written `architecture/embedding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellSpec {
    pub architecture: Architecture,
    pub embedding: EmbeddingId,
}

impl CellSpec {
    pub fn id(&self) -> String {
        self.to_string()
    }

    /// File stem usable on every filesystem.
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.architecture, self.embedding)
    }
}

impl fmt::Display for CellSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.architecture, self.embedding)
    }
}

impl FromStr for CellSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (arch, emb) = s
            .split_once('/')
            .ok_or_else(|| Error::invalid(format!("cell `{s}` is not of the form architecture/embedding")))?;
        Ok(CellSpec {
            architecture: arch.parse()?,
            embedding: emb.parse()?,
        })
    }
}

/// Seed for the named stream under `root`: FNV-1a of the label, mixed
/// with the root and finalized with splitmix64.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ root.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
