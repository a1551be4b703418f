use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CellSpec;
use crate::embed::{CbowConfig, EncoderConfig};
use crate::ensemble::StackerConfig;
use crate::error::{Error, Result};
use crate::models::{Hyperparameters, TrainBudget};
use crate::textnorm::NormalizationSpec;
use crate::types::{ClassLabel, ClassWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_name")]
    pub name: String,
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// `architecture/embedding` cells, e.g. `textcnn/cbow-space`.
    pub cells: Vec<String>,
    /// Worker threads for per-cell training.
    #[serde(default = "one")]
    pub threads: usize,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output() -> PathBuf {
    "out".into()
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: PathBuf,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { train_fraction: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizeSection {
    pub bpe_merges: usize,
    pub max_len: usize,
}

impl Default for TokenizeSection {
    fn default() -> Self {
        TokenizeSection {
            bpe_merges: 500,
            max_len: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub weights: [f64; 3],
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            weights: ClassWeights::DEFAULT.as_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub enabled: bool,
    pub n_positions: usize,
    pub n_outputs: usize,
    pub min_per_class: usize,
    pub classes: Vec<ClassLabel>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            enabled: false,
            n_positions: 1,
            n_outputs: 4,
            min_per_class: 3,
            classes: vec![ClassLabel::Offensive, ClassLabel::Hate],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub threshold: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { threshold: 0.67 }
    }
}

/// Everything a full run needs. Relative paths are resolved against the
/// directory holding the configuration file. Per-stage seeds are derived
/// from `experiment.seed`, so the `seed` keys of the individual sections
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip)]
    pub base_dir: PathBuf,
    pub experiment: ExperimentSection,
    pub data: DataSection,
    #[serde(default)]
    pub normalization: NormalizationSpec,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub tokenize: TokenizeSection,
    #[serde(default)]
    pub cbow: CbowConfig,
    #[serde(default)]
    pub mlm: EncoderConfig,
    #[serde(default)]
    pub model: Hyperparameters,
    #[serde(default)]
    pub training: TrainBudget,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub stacker: StackerConfig,
}

impl ExperimentConfig {
    pub fn parse(source: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig =
            toml::from_str(source).map_err(|e| Error::Serde(format!("experiment config: {e}")))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&source, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.experiment.output_dir)
    }

    pub fn weights(&self) -> Result<ClassWeights> {
        ClassWeights::new(self.loss.weights)
    }

    /// Cells in lexicographic id order.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        let mut cells: Vec<CellSpec> = self.experiment.cells.iter().map(|c| c.parse()).collect::<Result<_>>()?;
        cells.sort_by_key(CellSpec::id);
        let before = cells.len();
        cells.dedup();
        if cells.len() != before {
            return Err(Error::invalid("duplicate experiment cells"));
        }
        Ok(cells)
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.cells()?;
        if cells.is_empty() {
            return Err(Error::invalid("experiment lists no cells"));
        }
        self.weights()?;
        if !(0.0..=1.0).contains(&self.ensemble.threshold) {
            return Err(Error::invalid("ensemble threshold must lie in [0, 1]"));
        }
        if self.experiment.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        if self.tokenize.max_len == 0 {
            return Err(Error::invalid("tokenize.max_len must be positive"));
        }
        let mut required = vec![("dataset", Some(&self.data.dataset))];
        if cells.iter().any(|c| c.embedding.needs_lexicon()) {
            if self.data.lexicon.is_none() {
                return Err(Error::MissingResource("segmented cells need data.lexicon".into()));
            }
            required.push(("lexicon", self.data.lexicon.as_ref()));
        }
        if cells.iter().any(|c| c.embedding.needs_pretrained()) {
            if self.data.pretrained.is_none() {
                return Err(Error::MissingResource("pretrained cells need data.pretrained".into()));
            }
            required.push(("pretrained", self.data.pretrained.as_ref()));
        }
        if let Some(e) = &self.normalization.emoticons {
            required.push(("emoticons", Some(e)));
        }
        for (what, path) in required {
            let path = self.resolve(path.expect("checked above"));
            if !path.is_file() {
                return Err(Error::MissingResource(format!("{what} file {}", path.display())));
            }
        }
        Ok(())
    }
}
