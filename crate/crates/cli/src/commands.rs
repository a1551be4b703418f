use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vihsd_core::augment::{augment_dataset, select_common_words, AugmentConfig};
use vihsd_core::embed::{
    train_cbow, train_mlm_encoder, CbowConfig, EmbeddingKind, EncoderConfig, Featurizer, FeaturizerSpec,
    SentenceEncoder,
};
use vihsd_core::ensemble::{
    build_features, select_models, train_stacker, Ensemble, EnsembleManifest, EnsembleMember, StackerConfig,
    SubmodelReport,
};
use vihsd_core::eval::{confusion, save_dataset, stratified_split, token_error_share};
use vihsd_core::experiment::{run_experiment, ExperimentConfig};
use vihsd_core::models::{train_model, Hyperparameters, ModelConfig, ModelSnapshot, TrainBudget};
use vihsd_core::textnorm::{clean, NormalizationConfig, NormalizationSpec};
use vihsd_core::tokenize::{learn_bpe, BpeMergeTable, Lexicon, Tokenizer, TokenizerResources};
use vihsd_core::{ClassLabel, ClassWeights, LabeledComment};

use crate::io::{absolute, ensure_parent, read_comments, read_dataset, read_gold, read_lines, read_texts, writer};
use crate::{Cli, Command, NormalizationArgs, TokenizerArgs};

struct RunContext {
    config: Option<ExperimentConfig>,
    seed: u64,
    out: PathBuf,
}

impl RunContext {
    fn new(cli: &Cli) -> Result<Self> {
        let config = cli
            .config
            .as_deref()
            .map(|p| ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())))
            .transpose()?;
        let seed = cli
            .seed
            .or_else(|| config.as_ref().map(|c| c.experiment.seed))
            .unwrap_or(0);
        Ok(RunContext {
            config,
            seed,
            out: cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        })
    }

    fn out_file(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(default))
    }

    /// Command-line flags, else the configuration's section, else defaults.
    fn normalization(&self, args: Option<&NormalizationArgs>) -> Result<(NormalizationSpec, NormalizationConfig)> {
        let flagged = args.filter(|a| a.emoticons.is_some() || a.no_separate_punct);
        let (spec, base) = match (flagged, &self.config) {
            (Some(a), _) => (
                NormalizationSpec {
                    emoticons: a.emoticons.as_deref().map(absolute).transpose()?,
                    separate_punct: !a.no_separate_punct,
                },
                PathBuf::from("."),
            ),
            (None, Some(c)) => {
                let mut spec = c.normalization.clone();
                spec.emoticons = spec.emoticons.as_deref().map(|e| absolute(&c.resolve(e))).transpose()?;
                (spec, c.base_dir.clone())
            }
            (None, None) => (NormalizationSpec::default(), PathBuf::from(".")),
        };
        let built = spec.build(&base)?;
        Ok((spec, built))
    }

    fn weights(&self, flag: &Option<String>) -> Result<ClassWeights> {
        match (flag, &self.config) {
            (Some(w), _) => Ok(w.parse()?),
            (None, Some(c)) => Ok(c.weights()?),
            (None, None) => Ok(ClassWeights::DEFAULT),
        }
    }
}

fn tokenizer(args: &TokenizerArgs) -> Result<Tokenizer> {
    let bpe = args.bpe.as_deref().map(BpeMergeTable::load).transpose()?;
    let lexicon = args.lexicon.as_deref().map(Lexicon::load).transpose()?;
    Ok(Tokenizer::new(args.tokenizer, &TokenizerResources { bpe, lexicon })?)
}

fn write_report(path: &Path, value: &SubmodelReport) -> Result<()> {
    ensure_parent(path)?;
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

fn cleaned_rows(rows: Vec<LabeledComment>, normalization: &NormalizationConfig) -> Vec<LabeledComment> {
    rows.into_iter()
        .map(|r| LabeledComment::new(r.id, clean(&r.text, normalization), r.label))
        .collect()
}

/// The report file written next to a snapshot.
fn report_path(snapshot: &Path) -> PathBuf {
    let stem = snapshot.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    snapshot.with_file_name(format!("{stem}.report.json"))
}

/// One report, or the array `run` writes to `submodels.json`. Relative
/// snapshot paths are resolved against the report's directory.
fn load_reports(path: &Path) -> Result<Vec<SubmodelReport>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut reports: Vec<SubmodelReport> = match serde_json::from_str::<Vec<SubmodelReport>>(&text) {
        Ok(many) => many,
        Err(_) => vec![serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?],
    };
    let base = absolute(path.parent().unwrap_or(Path::new(".")))?;
    for r in &mut reports {
        r.snapshot = r
            .snapshot
            .take()
            .map(|s| if s.is_absolute() { s } else { base.join(s) });
    }
    Ok(reports)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let ctx = RunContext::new(&cli)?;
    match &cli.command {
        Command::Clean {
            input,
            output,
            normalization,
        } => {
            let (_, norm) = ctx.normalization(Some(normalization))?;
            let mut w = writer(output.as_deref())?;
            for line in read_lines(input.as_deref())? {
                writeln!(w, "{}", clean(&line, &norm))?;
            }
            w.flush()?;
        }

        Command::LearnBpe { input, merges, output } => {
            let (_, norm) = ctx.normalization(None)?;
            let corpus: Vec<Vec<String>> = read_texts(input)?
                .iter()
                .map(|t| clean(t, &norm).split_whitespace().map(String::from).collect())
                .collect();
            let table = learn_bpe(&corpus, *merges)?;
            let path = ctx.out_file(output, "bpe.txt");
            ensure_parent(&path)?;
            table.save(&path)?;
            eprintln!("{} merges written to {}", table.len(), path.display());
        }

        Command::TrainEmbedding {
            kind,
            input,
            tokenizer: tok,
            dim,
            epochs,
            output,
        } => {
            let (_, norm) = ctx.normalization(None)?;
            let tokenizer = tokenizer(tok)?;
            let corpus: Vec<Vec<String>> = read_texts(input)?
                .iter()
                .map(|t| tokenizer.tokenize(&clean(t, &norm)))
                .collect();
            match kind {
                EmbeddingKind::Cbow => {
                    let mut cfg = ctx.config.as_ref().map_or_else(CbowConfig::default, |c| c.cbow.clone());
                    cfg.dim = dim.unwrap_or(cfg.dim);
                    cfg.epochs = epochs.unwrap_or(cfg.epochs);
                    cfg.seed = ctx.seed;
                    let trained = train_cbow(&corpus, &cfg)?;
                    let path = ctx.out_file(output, "cbow.vec");
                    ensure_parent(&path)?;
                    trained.matrix.save(&path)?;
                    eprintln!(
                        "{} vectors of dim {} written to {}; epoch losses {:?}",
                        trained.matrix.vocab().len(),
                        trained.matrix.dim(),
                        path.display(),
                        trained.epoch_losses
                    );
                }
                EmbeddingKind::Mlm => {
                    let mut cfg = ctx
                        .config
                        .as_ref()
                        .map_or_else(EncoderConfig::default, |c| c.mlm.clone());
                    cfg.dim = dim.unwrap_or(cfg.dim);
                    cfg.epochs = epochs.unwrap_or(cfg.epochs);
                    cfg.seed = ctx.seed;
                    let (encoder, report) = train_mlm_encoder(&corpus, &cfg)?;
                    let path = ctx.out_file(output, "mlm.json");
                    ensure_parent(&path)?;
                    encoder.save(&path)?;
                    eprintln!(
                        "encoder written to {}; held-out loss {:.4} -> {:.4}",
                        path.display(),
                        report.initial_holdout_loss,
                        report.final_holdout_loss()
                    );
                }
                EmbeddingKind::Pretrained => bail!("pretrained vectors are read from a file, not trained"),
            }
        }

        Command::Tokenize {
            input,
            tokenizer: tok,
            output,
        } => {
            let (_, norm) = ctx.normalization(None)?;
            let tokenizer = tokenizer(tok)?;
            let mut w = writer(output.as_deref())?;
            for line in read_lines(input.as_deref())? {
                writeln!(w, "{}", tokenizer.tokenize(&clean(&line, &norm)).join(" "))?;
            }
            w.flush()?;
        }

        Command::Augment {
            dataset,
            encoder,
            n_outputs,
            n_positions,
            classes,
            min_per_class,
            output,
        } => {
            let (_, norm) = ctx.normalization(None)?;
            let rows = cleaned_rows(read_dataset(dataset)?, &norm);
            let encoder = SentenceEncoder::load(encoder)?;
            let common = select_common_words(&rows, *min_per_class, &norm)?;
            let cfg = AugmentConfig {
                n_positions: *n_positions,
                n_outputs: *n_outputs,
                min_per_class: *min_per_class,
                classes: classes.clone(),
                seed: ctx.seed,
            };
            let augmented = augment_dataset(&rows, &encoder, &common, &cfg)?;
            let path = ctx.out_file(output, "augmented.tsv");
            ensure_parent(&path)?;
            save_dataset(&path, &augmented)?;
            eprintln!(
                "{} rows written to {} ({} common words)",
                augmented.len(),
                path.display(),
                common.len()
            );
        }

        Command::Split {
            dataset,
            train_fraction,
        } => {
            let rows = read_dataset(dataset)?;
            let (train, dev) = stratified_split(&rows, *train_fraction, ctx.seed)?;
            fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
            save_dataset(&ctx.out.join("train.tsv"), &train)?;
            save_dataset(&ctx.out.join("dev.tsv"), &dev)?;
            println!("train\t{}\ndev\t{}", train.len(), dev.len());
        }

        Command::TrainModel {
            arch,
            embedding,
            embedding_kind,
            tokenizer: tok,
            train,
            dev,
            weights,
            max_len,
            epochs,
            output,
        } => {
            let (_, norm) = ctx.normalization(None)?;
            let weights = ctx.weights(weights)?;
            let spec = FeaturizerSpec {
                tokenizer: tok.tokenizer,
                bpe: tok.bpe.as_deref().map(absolute).transpose()?,
                lexicon: tok.lexicon.as_deref().map(absolute).transpose()?,
                embedding_kind: *embedding_kind,
                embedding: absolute(embedding)?,
                max_len: *max_len,
            };
            let featurizer = Featurizer::load(&spec, Path::new("."))?;
            let train_rows = cleaned_rows(read_dataset(train)?, &norm);
            let dev_rows = cleaned_rows(read_dataset(dev)?, &norm);
            let texts = |rows: &[LabeledComment]| rows.iter().map(|r| r.text.clone()).collect::<Vec<_>>();
            let labels = |rows: &[LabeledComment]| rows.iter().map(|r| r.label).collect::<Vec<ClassLabel>>();
            let (x_train, x_dev) = (
                featurizer.featurize(&texts(&train_rows)),
                featurizer.featurize(&texts(&dev_rows)),
            );
            let (y_train, y_dev) = (labels(&train_rows), labels(&dev_rows));

            let mut budget = ctx
                .config
                .as_ref()
                .map_or_else(TrainBudget::default, |c| c.training.clone());
            budget.max_epochs = epochs.unwrap_or(budget.max_epochs);
            let model_config = ModelConfig {
                architecture: *arch,
                embedding: format!("{embedding_kind}-{}", tok.tokenizer),
                hyper: ctx
                    .config
                    .as_ref()
                    .map_or_else(Hyperparameters::default, |c| c.model.clone()),
                seed: ctx.seed,
            };
            let trained = train_model(&model_config, (&x_train, &y_train), (&x_dev, &y_dev), &weights, &budget)?;
            let preds: Vec<ClassLabel> = trained.dev_probs.iter().map(|p| p.argmax()).collect();
            let matrix = confusion(&preds, &y_dev)?;

            let default = format!("models/{}_{}.json", arch, model_config.embedding);
            let path = absolute(&ctx.out_file(output, &default))?;
            ensure_parent(&path)?;
            ModelSnapshot::new(trained.model, trained.best_dev_loss, spec).save(&path)?;
            let report = SubmodelReport {
                id: model_config.id(),
                dev_f1: matrix.f1_macro(),
                sample_ids: dev_rows.iter().map(|r| r.id.clone()).collect(),
                labels: y_dev,
                dev_probs: trained.dev_probs,
                snapshot: Some(path.clone()),
            };
            write_report(&report_path(&path), &report)?;
            println!(
                "{}\tdev_macro_f1\t{:.4}\tbest_epoch\t{}\tbest_dev_loss\t{:.6}",
                report.id, report.dev_f1, trained.best_epoch, trained.best_dev_loss
            );
            eprintln!("snapshot {}\nreport {}", path.display(), report_path(&path).display());
        }

        Command::EnsembleTrain {
            reports,
            threshold,
            weights,
            normalization,
        } => {
            let weights = ctx.weights(weights)?;
            let (spec, _) = ctx.normalization(Some(normalization))?;
            let mut all = Vec::new();
            for path in reports {
                all.extend(load_reports(path)?);
            }
            let selected = select_models(&all, *threshold)?;
            let features = build_features(&selected, &all)?;
            let stacker_config = StackerConfig {
                seed: ctx.seed,
                ..ctx
                    .config
                    .as_ref()
                    .map_or_else(StackerConfig::default, |c| c.stacker.clone())
            };
            let fit = train_stacker(&features, &weights, &stacker_config)?;
            fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
            fit.model.save(&ctx.out.join("stacker.json"))?;
            let models = selected
                .iter()
                .map(|id| {
                    let r = all.iter().find(|r| &r.id == id).expect("selected from these reports");
                    let snapshot = r
                        .snapshot
                        .clone()
                        .with_context(|| format!("report {id} does not name a snapshot"))?;
                    Ok(EnsembleMember {
                        id: id.clone(),
                        snapshot,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let manifest = EnsembleManifest {
                threshold: *threshold,
                normalization: spec,
                models,
                stacker: "stacker.json".into(),
            };
            let path = ctx.out.join("ensemble.json");
            manifest.save(&path)?;
            println!("selected\t{}", selected.join(","));
            println!("fit_macro_f1\t{:.4}", fit.fit_f1);
            eprintln!("manifest {}", path.display());
        }

        Command::Predict {
            manifest,
            input,
            output,
        } => {
            let ensemble = Ensemble::load(manifest)?;
            let lines = read_comments(input.as_deref())?;
            let preds = ensemble.predict(&lines)?;
            let mut w = writer(output.as_deref())?;
            for p in preds {
                let [c, o, h] = p.probs.0;
                writeln!(w, "{}\t{c:.6}\t{o:.6}\t{h:.6}", p.label)?;
            }
            w.flush()?;
        }

        Command::Evaluate { gold, pred } => {
            let gold = read_gold(gold)?;
            let pred = read_gold(pred)?;
            let matrix = confusion(&pred, &gold)?;
            println!("macro_f1\t{:.4}", matrix.f1_macro());
            println!("class\tprecision\trecall\tf1\tsupport");
            for c in ClassLabel::ALL {
                println!(
                    "{c}\t{:.4}\t{:.4}\t{:.4}\t{}",
                    matrix.precision(c),
                    matrix.recall(c),
                    matrix.f1(c),
                    matrix.gold_count(c)
                );
            }
            println!("{matrix}");
        }

        Command::AnalyzeToken {
            dataset,
            pred,
            token,
            from,
            to,
        } => {
            let (_, norm) = ctx.normalization(None)?;
            let rows = read_dataset(dataset)?;
            let preds = read_gold(pred)?;
            let share = token_error_share(&rows, &preds, *from, *to, token, &norm)?;
            let errors = rows
                .iter()
                .zip(&preds)
                .filter(|(r, p)| r.label == *from && **p == *to)
                .count();
            println!("{from}->{to}\terrors\t{errors}\tshare_with_{token}\t{share:.4}");
        }

        Command::Run { threads } => {
            let Some(mut config) = ctx.config else {
                bail!("`run` needs --config");
            };
            if let Some(seed) = cli.seed {
                config.experiment.seed = seed;
            }
            if let Some(out) = &cli.out {
                config.experiment.output_dir = absolute(out)?;
            }
            if let Some(t) = threads {
                config.experiment.threads = *t;
            }
            let report = run_experiment(&config)?;
            print!("{}", report.to_table());
            eprintln!("outputs in {}", config.output_dir().display());
        }
    }
    Ok(())
}
