use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{derive_seed, CellSpec, EmbeddingId, ExperimentConfig};
use crate::augment::{augment_dataset, select_common_words, AugmentConfig};
use crate::embed::{train_cbow, train_mlm_encoder, EmbeddingKind, EmbeddingMatrix, Featurizer, FeaturizerSpec};
use crate::ensemble::{
    build_features, select_models, train_stacker, EnsembleManifest, EnsembleMember, StackerConfig, SubmodelReport,
};
use crate::error::{Error, Result};
use crate::eval::{
    class_distribution, confusion, f1_macro, load_dataset, save_dataset, stratified_split, DatasetStats,
};
use crate::models::{train_model, Architecture, ModelConfig, ModelSnapshot};
use crate::textnorm::{clean, NormalizationConfig, NormalizationSpec};
use crate::tokenize::{learn_bpe, BpeMergeTable, Lexicon, Tokenizer, TokenizerKind, TokenizerResources};
use crate::types::{ClassLabel, ClassWeights, LabeledComment, NUM_CLASSES};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub id: String,
    pub path: String,
    /// Last CBOW epoch loss or final held-out masked-token loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub id: String,
    pub architecture: Architecture,
    pub embedding: String,
    pub dev_f1: f64,
    pub best_dev_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetStats,
    pub train: DatasetStats,
    pub dev: DatasetStats,
    pub augmented_rows: usize,
    pub embeddings: Vec<EmbeddingResult>,
    /// Dev macro-F1 table, one row per cell in id order.
    pub cells: Vec<CellResult>,
    pub threshold: f64,
    pub selected: Vec<String>,
    pub ensemble_dev_f1: f64,
    /// `[gold][predicted]` counts of the ensemble on dev.
    pub ensemble_confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub stacker_best_epoch: usize,
}

impl ExperimentReport {
    /// Tab-separated cell table followed by the ensemble summary.
    pub fn to_table(&self) -> String {
        let mut out =
            String::from("cell\tarchitecture\tembedding\tdev_macro_f1\tbest_epoch\tbest_dev_loss\tselected\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.4}\t{}\t{:.6}\t{}",
                c.id, c.architecture, c.embedding, c.dev_f1, c.best_epoch, c.best_dev_loss, c.selected
            );
        }
        let _ = writeln!(
            out,
            "ensemble\tstacker\t{}\t{:.4}\t{}\t\t",
            self.selected.join(","),
            self.ensemble_dev_f1,
            self.stacker_best_epoch
        );
        out
    }
}

/// Files written under the output directory. Paths are registered before
/// the write; the manifest lists those that exist.
struct Outputs {
    root: PathBuf,
    files: BTreeSet<String>,
}

impl Outputs {
    fn new(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Outputs {
            root,
            files: BTreeSet::new(),
        })
    }

    /// Absolute path for `rel`, with parent directories created.
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.insert(rel.to_string());
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.path(rel)?;
        let mut json = serde_json::to_string_pretty(value)?;
        json.push('\n');
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    fn copy(&mut self, from: &Path, rel: &str) -> Result<()> {
        let to = self.path(rel)?;
        fs::copy(from, &to).map_err(|e| Error::io(from, e))?;
        Ok(())
    }

    fn manifest(&self) -> Result<Manifest> {
        let files = self
            .files
            .iter()
            .filter(|rel| self.root.join(rel).is_file())
            .map(|rel| {
                let path = self.root.join(rel);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                Ok(FileEntry {
                    path: rel.clone(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Manifest { files })
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(&self.manifest()?)?;
        json.push('\n');
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

fn texts(rows: &[LabeledComment]) -> Vec<&str> {
    rows.iter().map(|r| r.text.as_str()).collect()
}

fn labels(rows: &[LabeledComment]) -> Vec<ClassLabel> {
    rows.iter().map(|r| r.label).collect()
}

fn embedding_file(id: EmbeddingId) -> String {
    match id.kind {
        EmbeddingKind::Cbow => format!("embeddings/{id}.vec"),
        EmbeddingKind::Pretrained => "embeddings/pretrained.vec".into(),
        EmbeddingKind::Mlm => format!("embeddings/{id}.json"),
    }
}

const BPE_FILE: &str = "tokenize/bpe.txt";
const LEXICON_FILE: &str = "tokenize/lexicon.txt";
const EMOTICON_FILE: &str = "resources/emoticons.txt";

/// Spec as seen from a snapshot in `models/`.
fn featurizer_spec(id: EmbeddingId, max_len: usize) -> FeaturizerSpec {
    let up = |rel: &str| PathBuf::from(format!("../{rel}"));
    FeaturizerSpec {
        tokenizer: id.tokenizer,
        bpe: (id.tokenizer == TokenizerKind::Bpe).then(|| up(BPE_FILE)),
        lexicon: (id.tokenizer == TokenizerKind::Segmented).then(|| up(LEXICON_FILE)),
        embedding_kind: id.kind,
        embedding: up(&embedding_file(id)),
        max_len,
    }
}

struct Prepared {
    normalization: NormalizationConfig,
    normalization_spec: NormalizationSpec,
    dataset: Vec<LabeledComment>,
}

fn load_stage(config: &ExperimentConfig, out: &mut Outputs) -> Result<Prepared> {
    let dataset = load_dataset(&config.resolve(&config.data.dataset))?;
    let normalization = config.normalization.build(&config.base_dir)?;
    let mut normalization_spec = config.normalization.clone();
    if let Some(e) = &config.normalization.emoticons {
        out.copy(&config.resolve(e), EMOTICON_FILE)?;
        normalization_spec.emoticons = Some(EMOTICON_FILE.into());
    }
    Ok(Prepared {
        normalization,
        normalization_spec,
        dataset,
    })
}

fn clean_stage(dataset: &[LabeledComment], normalization: &NormalizationConfig) -> Vec<LabeledComment> {
    dataset
        .par_iter()
        .map(|row| LabeledComment::new(row.id.clone(), clean(&row.text, normalization), row.label))
        .collect()
}

fn tokenize_stage(
    config: &ExperimentConfig,
    kinds: &BTreeSet<TokenizerKind>,
    train: &[LabeledComment],
    out: &mut Outputs,
) -> Result<TokenizerResources> {
    let mut resources = TokenizerResources::default();
    if kinds.contains(&TokenizerKind::Bpe) {
        let corpus: Vec<Vec<&str>> = train.iter().map(|r| r.text.split_whitespace().collect()).collect();
        let table = learn_bpe(&corpus, config.tokenize.bpe_merges)?;
        table.save(&out.path(BPE_FILE)?)?;
        resources.bpe = Some(BpeMergeTable::load(&out.root.join(BPE_FILE))?);
    }
    if kinds.contains(&TokenizerKind::Segmented) {
        let source = config.resolve(config.data.lexicon.as_ref().expect("validated"));
        out.copy(&source, LEXICON_FILE)?;
        resources.lexicon = Some(Lexicon::load(&out.root.join(LEXICON_FILE))?);
    }
    Ok(resources)
}

fn embedding_stage(
    config: &ExperimentConfig,
    ids: &[EmbeddingId],
    resources: &TokenizerResources,
    train: &[LabeledComment],
    out: &mut Outputs,
) -> Result<Vec<EmbeddingResult>> {
    let root = config.experiment.seed;
    let mut results = Vec::with_capacity(ids.len());
    for &id in ids {
        let rel = embedding_file(id);
        let tokenizer = Tokenizer::new(id.tokenizer, resources)?;
        let corpus = || -> Vec<Vec<String>> { train.iter().map(|r| tokenizer.tokenize(&r.text)).collect() };
        let final_loss = match id.kind {
            EmbeddingKind::Cbow => {
                let mut cfg = config.cbow.clone();
                cfg.seed = derive_seed(root, &format!("embedding/{id}"));
                let trained = train_cbow(&corpus(), &cfg)?;
                trained.matrix.save(&out.path(&rel)?)?;
                trained.epoch_losses.last().copied()
            }
            EmbeddingKind::Pretrained => {
                if !out.files.contains(&rel) {
                    let source = config.resolve(config.data.pretrained.as_ref().expect("validated"));
                    EmbeddingMatrix::load(&source)?;
                    out.copy(&source, &rel)?;
                }
                None
            }
            EmbeddingKind::Mlm => {
                let mut cfg = config.mlm.clone();
                cfg.seed = derive_seed(root, &format!("embedding/{id}"));
                let (encoder, report) = train_mlm_encoder(&corpus(), &cfg)?;
                encoder.save(&out.path(&rel)?)?;
                Some(report.final_holdout_loss())
            }
        };
        results.push(EmbeddingResult {
            id: id.to_string(),
            path: rel,
            final_loss,
        });
    }
    Ok(results)
}

fn augment_stage(
    config: &ExperimentConfig,
    train: &[LabeledComment],
    normalization: &NormalizationConfig,
    out: &mut Outputs,
) -> Result<Vec<LabeledComment>> {
    let id = EmbeddingId {
        kind: EmbeddingKind::Mlm,
        tokenizer: TokenizerKind::Space,
    };
    let encoder = crate::embed::SentenceEncoder::load(&out.root.join(embedding_file(id)))?;
    let section = &config.augment;
    let common = select_common_words(train, section.min_per_class, normalization)?;
    let cfg = AugmentConfig {
        n_positions: section.n_positions,
        n_outputs: section.n_outputs,
        min_per_class: section.min_per_class,
        classes: section.classes.clone(),
        seed: derive_seed(config.experiment.seed, "augment"),
    };
    let rows = augment_dataset(train, &encoder, &common, &cfg)?;
    save_dataset(&out.path("data/augmented.tsv")?, &rows)?;
    Ok(rows)
}

struct CellOutcome {
    result: CellResult,
    report: SubmodelReport,
}

fn train_cell(
    config: &ExperimentConfig,
    cell: CellSpec,
    models_dir: &Path,
    snapshot_rel: &str,
    train: &[LabeledComment],
    dev: &[LabeledComment],
    weights: &ClassWeights,
) -> Result<CellOutcome> {
    let spec = featurizer_spec(cell.embedding, config.tokenize.max_len);
    let featurizer = Featurizer::load(&spec, models_dir)?;
    let x_train = featurizer.featurize(&texts(train));
    let x_dev = featurizer.featurize(&texts(dev));
    let (y_train, y_dev) = (labels(train), labels(dev));
    let model_config = ModelConfig {
        architecture: cell.architecture,
        embedding: cell.embedding.to_string(),
        hyper: config.model.clone(),
        seed: derive_seed(config.experiment.seed, &format!("cell/{cell}")),
    };
    let trained = train_model(
        &model_config,
        (&x_train, &y_train),
        (&x_dev, &y_dev),
        weights,
        &config.training,
    )?;
    let preds: Vec<ClassLabel> = trained.dev_probs.iter().map(|p| p.argmax()).collect();
    let dev_f1 = f1_macro(&preds, &y_dev)?;
    let snapshot = ModelSnapshot::new(trained.model, trained.best_dev_loss, spec);
    snapshot.save(&models_dir.join(Path::new(snapshot_rel).file_name().expect("file name")))?;
    Ok(CellOutcome {
        result: CellResult {
            id: cell.id(),
            architecture: cell.architecture,
            embedding: cell.embedding.to_string(),
            dev_f1,
            best_dev_loss: trained.best_dev_loss,
            best_epoch: trained.best_epoch,
            epochs_run: trained.dev_losses.len(),
            selected: false,
        },
        report: SubmodelReport {
            id: cell.id(),
            dev_f1,
            sample_ids: dev.iter().map(|r| r.id.clone()).collect(),
            labels: y_dev,
            dev_probs: trained.dev_probs,
            snapshot: Some(snapshot_rel.into()),
        },
    })
}

fn train_stage(
    config: &ExperimentConfig,
    cells: &[CellSpec],
    train: &[LabeledComment],
    dev: &[LabeledComment],
    weights: &ClassWeights,
    out: &mut Outputs,
) -> Result<Vec<CellOutcome>> {
    let snapshots: Vec<String> = cells
        .iter()
        .map(|c| {
            let rel = format!("models/{}.json", c.file_stem());
            out.path(&rel).map(|_| rel)
        })
        .collect::<Result<_>>()?;
    let models_dir = out.root.join("models");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.experiment.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        cells
            .par_iter()
            .zip(snapshots.par_iter())
            .map(|(&cell, rel)| {
                train_cell(config, cell, &models_dir, rel, train, dev, weights).map_err(|e| Error::Cell {
                    cell: cell.id(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let reports: Vec<&SubmodelReport> = outcomes.iter().map(|o| &o.report).collect();
    out.write_json("submodels.json", &reports)?;
    Ok(outcomes)
}

struct EnsembleOutcome {
    selected: Vec<String>,
    dev_f1: f64,
    confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    best_epoch: usize,
}

fn ensemble_stage(
    config: &ExperimentConfig,
    reports: &[SubmodelReport],
    normalization: NormalizationSpec,
    weights: &ClassWeights,
    out: &mut Outputs,
) -> Result<EnsembleOutcome> {
    let selected = select_models(reports, config.ensemble.threshold)?;
    let features = build_features(&selected, reports)?;
    let stacker_config = StackerConfig {
        seed: derive_seed(config.experiment.seed, "stacker"),
        ..config.stacker.clone()
    };
    let fit = train_stacker(&features, weights, &stacker_config)?;
    fit.model.save(&out.path("stacker.json")?)?;
    let members = selected
        .iter()
        .map(|id| {
            let report = reports
                .iter()
                .find(|r| &r.id == id)
                .expect("selected ids come from the reports");
            EnsembleMember {
                id: id.clone(),
                snapshot: report.snapshot.clone().expect("runner reports carry snapshots"),
            }
        })
        .collect();
    let manifest = EnsembleManifest {
        threshold: config.ensemble.threshold,
        normalization,
        models: members,
        stacker: "stacker.json".into(),
    };
    manifest.save(&out.path("ensemble.json")?)?;
    let preds: Vec<ClassLabel> = fit.model.predict(&features.rows)?.iter().map(|p| p.argmax()).collect();
    let matrix = confusion(&preds, &features.labels)?;
    Ok(EnsembleOutcome {
        selected,
        dev_f1: matrix.f1_macro(),
        confusion: matrix.0,
        best_epoch: fit.best_epoch,
    })
}

/// Runs every stage in order. A failing stage aborts the run with the
/// stage name; files written before the failure are kept and listed in
/// the manifest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut out = Outputs::new(config.output_dir())?;
    let result = run_stages(config, &mut out);
    let written = out.write_manifest().map_err(Error::in_stage("report"));
    let report = result?;
    written?;
    Ok(report)
}

fn run_stages(config: &ExperimentConfig, out: &mut Outputs) -> Result<ExperimentReport> {
    let cells = config.cells()?;
    let weights = config.weights()?;
    let root_seed = config.experiment.seed;

    let prepared = load_stage(config, out).map_err(Error::in_stage("load"))?;
    let cleaned = clean_stage(&prepared.dataset, &prepared.normalization);

    let (train, dev) = stratified_split(&cleaned, config.split.train_fraction, derive_seed(root_seed, "split"))
        .and_then(|(train, dev)| {
            save_dataset(&out.path("data/train.tsv")?, &train)?;
            save_dataset(&out.path("data/dev.tsv")?, &dev)?;
            Ok((train, dev))
        })
        .map_err(Error::in_stage("split"))?;

    let mut ids: Vec<EmbeddingId> = cells.iter().map(|c| c.embedding).collect();
    if config.augment.enabled {
        ids.push(EmbeddingId {
            kind: EmbeddingKind::Mlm,
            tokenizer: TokenizerKind::Space,
        });
    }
    ids.sort_by_key(|id| id.to_string());
    ids.dedup();
    let kinds: BTreeSet<TokenizerKind> = ids.iter().map(|id| id.tokenizer).collect();

    let resources = tokenize_stage(config, &kinds, &train, out).map_err(Error::in_stage("tokenize"))?;
    let embeddings = embedding_stage(config, &ids, &resources, &train, out).map_err(Error::in_stage("embeddings"))?;

    let mut training_rows = train.clone();
    let mut augmented_rows = 0;
    if config.augment.enabled {
        let extra = augment_stage(config, &train, &prepared.normalization, out).map_err(Error::in_stage("augment"))?;
        augmented_rows = extra.len();
        training_rows.extend(extra);
    }

    let outcomes =
        train_stage(config, &cells, &training_rows, &dev, &weights, out).map_err(Error::in_stage("train"))?;
    let reports: Vec<SubmodelReport> = outcomes.iter().map(|o| o.report.clone()).collect();

    let ensemble = ensemble_stage(config, &reports, prepared.normalization_spec, &weights, out)
        .map_err(Error::in_stage("ensemble"))?;

    let report = (|| -> Result<ExperimentReport> {
        let report = ExperimentReport {
            name: config.experiment.name.clone(),
            seed: root_seed,
            dataset: class_distribution(&cleaned)?,
            train: class_distribution(&train)?,
            dev: class_distribution(&dev)?,
            augmented_rows,
            embeddings,
            cells: outcomes
                .into_iter()
                .map(|o| CellResult {
                    selected: ensemble.selected.contains(&o.result.id),
                    ..o.result
                })
                .collect(),
            threshold: config.ensemble.threshold,
            selected: ensemble.selected,
            ensemble_dev_f1: ensemble.dev_f1,
            ensemble_confusion: ensemble.confusion,
            stacker_best_epoch: ensemble.best_epoch,
        };
        out.write_json("report.json", &report)?;
        let table = out.path("report.tsv")?;
        fs::write(&table, report.to_table()).map_err(|e| Error::io(&table, e))?;
        Ok(report)
    })()
    .map_err(Error::in_stage("report"))?;
    Ok(report)
}
