use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingKind, EmbeddingMatrix, EmbeddingSource, Encoded, SentenceEncoder};
use crate::error::{Error, Result};
use crate::tokenize::{BpeMergeTable, Lexicon, Tokenizer, TokenizerKind, TokenizerResources};

/// Files and settings that turn cleaned text into classifier inputs.
/// Relative paths are resolved against the directory of the file that
/// stores the spec.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerSpec {
    pub tokenizer: TokenizerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpe: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    pub embedding_kind: EmbeddingKind,
    pub embedding: PathBuf,
    pub max_len: usize,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone)]
pub struct Featurizer {
    tokenizer: Tokenizer,
    source: EmbeddingSource,
    max_len: usize,
}

impl Featurizer {
    pub fn new(tokenizer: Tokenizer, source: EmbeddingSource, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        Ok(Featurizer {
            tokenizer,
            source,
            max_len,
        })
    }

    pub fn load(spec: &FeaturizerSpec, base: &Path) -> Result<Self> {
        let bpe = spec
            .bpe
            .as_ref()
            .map(|p| BpeMergeTable::load(&resolve(base, p)))
            .transpose()?;
        let lexicon = spec
            .lexicon
            .as_ref()
            .map(|p| Lexicon::load(&resolve(base, p)))
            .transpose()?;
        let tokenizer = Tokenizer::new(spec.tokenizer, &TokenizerResources { bpe, lexicon })?;
        let path = resolve(base, &spec.embedding);
        if !path.exists() {
            return Err(Error::MissingResource(format!("embedding file {}", path.display())));
        }
        let source = match spec.embedding_kind {
            EmbeddingKind::Cbow | EmbeddingKind::Pretrained => EmbeddingSource::Vectors(EmbeddingMatrix::load(&path)?),
            EmbeddingKind::Mlm => EmbeddingSource::Sentence(SentenceEncoder::load(&path)?),
        };
        Featurizer::new(tokenizer, source, spec.max_len)
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn source(&self) -> &EmbeddingSource {
        &self.source
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Inputs for already-cleaned texts.
    pub fn featurize<S: AsRef<str>>(&self, texts: &[S]) -> Encoded {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| self.tokenizer.tokenize(t.as_ref())).collect();
        self.source.encode(&docs, self.max_len)
    }
}
