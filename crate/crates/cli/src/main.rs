//! `vihsd`: cleaning, tokenization, embeddings, training, ensembling,
//! prediction and evaluation from the command line.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vihsd_core::embed::EmbeddingKind;
use vihsd_core::models::Architecture;
use vihsd_core::tokenize::TokenizerKind;
use vihsd_core::ClassLabel;

#[derive(Debug, Parser)]
#[command(name = "vihsd", version, about = "Three-class hate speech detection pipeline")]
pub struct Cli {
    /// Experiment configuration (TOML). Its sections supply defaults for
    /// the training subcommands and drive `run`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct NormalizationArgs {
    /// Emoticon table, `key<TAB>emoji` per line.
    #[arg(long)]
    pub emoticons: Option<PathBuf>,

    /// Do not insert spaces around punctuation and emoji.
    #[arg(long)]
    pub no_separate_punct: bool,
}

#[derive(Debug, Args)]
pub struct TokenizerArgs {
    #[arg(long, default_value = "space")]
    pub tokenizer: TokenizerKind,

    /// BPE merge table, required by `--tokenizer bpe`.
    #[arg(long)]
    pub bpe: Option<PathBuf>,

    /// Segmentation lexicon, required by `--tokenizer segmented`.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean comments, one per line.
    Clean {
        /// Input file; standard input when absent or `-`.
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[command(flatten)]
        normalization: NormalizationArgs,
    },

    /// Learn a BPE merge table from cleaned text.
    LearnBpe {
        /// Text lines or a labelled dataset.
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        merges: usize,
        /// Defaults to `<out>/bpe.txt`.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Train CBOW vectors or the masked-token sentence encoder.
    TrainEmbedding {
        #[arg(long)]
        kind: EmbeddingKind,
        /// Text lines or a labelled dataset.
        input: PathBuf,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Defaults to `<out>/<kind>.vec` or `<out>/mlm.json`.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Print the tokens of each cleaned line, space separated.
    Tokenize {
        input: Option<PathBuf>,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Generate masked-token replacement variants of minority rows.
    Augment {
        /// Labelled dataset.
        dataset: PathBuf,
        /// Sentence encoder snapshot trained on space tokens.
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long, default_value_t = 4)]
        n_outputs: usize,
        #[arg(long, default_value_t = 1)]
        n_positions: usize,
        #[arg(long, value_delimiter = ',', default_value = "offensive,hate")]
        classes: Vec<ClassLabel>,
        #[arg(long, default_value_t = 3)]
        min_per_class: usize,
        /// Defaults to `<out>/augmented.tsv`.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Stratified train/dev split into `<out>/train.tsv` and `<out>/dev.tsv`.
    Split {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
    },

    /// Train one classifier and write its snapshot and dev report.
    TrainModel {
        #[arg(long)]
        arch: Architecture,
        /// Vector file or sentence encoder snapshot.
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long, default_value = "cbow")]
        embedding_kind: EmbeddingKind,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Class weights `clean,offensive,hate`.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
        #[arg(long)]
        epochs: Option<usize>,
        /// Defaults to `<out>/models/<arch>_<embedding-kind>-<tokenizer>.json`.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Gate sub-model reports and train the stacker on their dev outputs.
    EnsembleTrain {
        /// Reports written by `train-model`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.67)]
        threshold: f64,
        #[arg(long)]
        weights: Option<String>,
        #[command(flatten)]
        normalization: NormalizationArgs,
    },

    /// Label comments with a trained ensemble.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        /// Comments one per line, or a labelled dataset.
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Macro-F1, per-class scores and the confusion matrix.
    Evaluate {
        /// Labelled dataset or label file.
        #[arg(long)]
        gold: PathBuf,
        /// Label file or `predict` output.
        #[arg(long)]
        pred: PathBuf,
    },

    /// Share of `from`→`to` errors whose text contains a token.
    AnalyzeToken {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        token: String,
        #[arg(long)]
        from: ClassLabel,
        #[arg(long)]
        to: ClassLabel,
    },

    /// Full experiment driven by `--config`.
    Run {
        /// Worker threads for per-cell training.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
