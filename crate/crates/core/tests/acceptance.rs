//! Acceptance checks, one line per criterion. Exits non-zero when any
//! criterion fails or runs over its time limit.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vihsd_core::augment::{augment_sentence, select_common_words};
use vihsd_core::embed::{train_mlm_encoder, Encoded, EncoderConfig, SentenceEncoder};
use vihsd_core::ensemble::{build_features, select_models, train_stacker, StackerConfig, SubmodelReport};
use vihsd_core::eval::{f1_macro, load_dataset, stratified_split};
use vihsd_core::experiment::{run_experiment, ExperimentConfig, MANIFEST_FILE};
use vihsd_core::models::{
    train_model, weighted_ce_loss, weighted_ce_node, Architecture, Classifier, Hyperparameters, InputShape,
    ModelConfig, TrainBudget,
};
use vihsd_core::nn::{check_gradients, Tensor};
use vihsd_core::textnorm::{clean, NormalizationConfig};
use vihsd_core::tokenize::Vocabulary;
use vihsd_core::{ClassLabel, ClassWeights, LabeledComment, ProbabilityTriple};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn toy_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/toy"))
}

fn random_distribution(rng: &mut ChaCha8Rng, floor: f64) -> [f64; 3] {
    let mut p = [0.0; 3];
    for v in &mut p {
        // occasionally far below the clipping epsilon
        *v = if rng.gen_bool(0.05) {
            rng.gen_range(0.0..1e-8)
        } else {
            rng.gen_range(floor..1.0)
        };
    }
    let s: f64 = p.iter().sum();
    p.map(|v| v / s)
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let probs: Vec<ProbabilityTriple> = (0..n)
            .map(|_| ProbabilityTriple(random_distribution(&mut rng, 0.0)))
            .collect();
        let labels: Vec<ClassLabel> = (0..n).map(|_| ClassLabel::ALL[rng.gen_range(0..3)]).collect();
        let w = [
            rng.gen_range(0.01..2.0),
            rng.gen_range(0.01..2.0),
            rng.gen_range(0.01..2.0),
        ];
        let mut expected = 0.0;
        for (p, y) in probs.iter().zip(&labels) {
            let q = p.0[y.index()].clamp(1e-7, 1.0);
            expected -= w[y.index()] * q.ln();
        }
        expected /= n as f64;
        let got = weighted_ce_loss(&probs, &labels, &ClassWeights::new(w).unwrap()).map_err(|e| e.to_string())?;
        worst = worst.max((got - expected).abs());
    }
    ensure!(worst <= 1e-9, "weighted loss deviates by {worst:e}");

    let mut worst_uniform = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let probs: Vec<ProbabilityTriple> = (0..n)
            .map(|_| {
                let p = [
                    rng.gen_range(1e-3..1.0),
                    rng.gen_range(1e-3..1.0),
                    rng.gen_range(1e-3..1.0),
                ];
                let s: f64 = p.iter().sum();
                ProbabilityTriple(p.map(|v| v / s))
            })
            .collect();
        let labels: Vec<ClassLabel> = (0..n).map(|_| ClassLabel::ALL[rng.gen_range(0..3)]).collect();
        let mean_ce = -probs.iter().zip(&labels).map(|(p, y)| p.0[y.index()].ln()).sum::<f64>() / n as f64;
        let got = weighted_ce_loss(&probs, &labels, &ClassWeights::UNIFORM).map_err(|e| e.to_string())?;
        worst_uniform = worst_uniform.max((got - mean_ce).abs());
    }
    ensure!(
        worst_uniform <= 1e-12,
        "uniform-weight loss deviates from mean CE by {worst_uniform:e}"
    );
    Ok(format!("max |diff| weighted {worst:.1e}, uniform {worst_uniform:.1e}"))
}

fn gradient_checks() -> Outcome {
    let (n, l, d) = (4, 6, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lengths = vec![6, 4, 5, 2];
    let mut data = vec![0.0; n * l * d];
    for (b, &len) in lengths.iter().enumerate() {
        for v in &mut data[b * l * d..(b * l + len) * d] {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let x = Encoded::Sequences {
        data: Tensor::new(vec![n, l, d], data),
        lengths,
    };
    let labels = [
        ClassLabel::Clean,
        ClassLabel::Offensive,
        ClassLabel::Hate,
        ClassLabel::Hate,
    ];
    let hyper = Hyperparameters {
        kernels: vec![2, 3],
        filters: 4,
        vdcnn_channels: 4,
        vdcnn_blocks: 2,
        hidden: 3,
        attention: 4,
        head_hidden: 5,
        adapter_hidden: 4,
        dropout: 0.3,
    };
    let mut summary = Vec::new();
    for arch in Architecture::ALL {
        let config = ModelConfig {
            hyper: hyper.clone(),
            ..ModelConfig::new(arch, "grad", 7)
        };
        let model = Classifier::new(config, InputShape::of(&x), &mut rng).map_err(|e| e.to_string())?;
        let mut params = model.params().clone();
        let samples = check_gradients(
            &mut params,
            |g, p| {
                let probs = model.forward(g, p, &x, None).expect("shapes agree");
                weighted_ce_node(g, probs, &labels, &ClassWeights::DEFAULT)
            },
            10,
            1e-5,
            &mut rng,
        );
        ensure!(samples.len() == 10, "{arch}: {} samples", samples.len());
        let worst = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
        if let Some(bad) = samples.iter().find(|s| !(s.rel_error <= 1e-4)) {
            return Err(format!("{arch}: {bad:?}"));
        }
        summary.push(format!("{arch} {worst:.1e}"));
    }
    Ok(format!("max relative error: {}", summary.join(", ")))
}

/// Sequences of noise words in which every offensive sample carries one
/// marker word and every hate sample another. Clean samples carry each
/// marker three times as often as its minority class does, so a marker alone
/// never makes a minority class the most likely one.
fn skewed_marker_set(n: usize, vectors: &[Vec<f64>], rng: &mut ChaCha8Rng) -> (Encoded, Vec<ClassLabel>) {
    const L: usize = 8;
    let d = vectors[0].len();
    let n_off = (n as f64 * 0.05).round() as usize;
    let n_hate = (n as f64 * 0.035).round() as usize;
    let n_clean = n - n_off - n_hate;
    let mut rows: Vec<(ClassLabel, Option<usize>)> = Vec::with_capacity(n);
    rows.extend(std::iter::repeat_n((ClassLabel::Offensive, Some(0)), n_off));
    rows.extend(std::iter::repeat_n((ClassLabel::Hate, Some(1)), n_hate));
    rows.extend(std::iter::repeat_n((ClassLabel::Clean, Some(0)), 3 * n_off));
    rows.extend(std::iter::repeat_n((ClassLabel::Clean, Some(1)), 3 * n_hate));
    rows.extend(std::iter::repeat_n(
        (ClassLabel::Clean, None),
        n_clean - 3 * n_off - 3 * n_hate,
    ));
    rows.shuffle(rng);
    let mut data = Vec::with_capacity(n * L * d);
    for &(_, marker) in &rows {
        let mut words: Vec<usize> = (0..L).map(|_| rng.gen_range(2..vectors.len())).collect();
        if let Some(m) = marker {
            words[rng.gen_range(0..L)] = m;
        }
        for w in words {
            data.extend_from_slice(&vectors[w]);
        }
    }
    let labels = rows.iter().map(|r| r.0).collect();
    (
        Encoded::Sequences {
            data: Tensor::new(vec![n, L, d], data),
            lengths: vec![L; n],
        },
        labels,
    )
}

fn class_weight_effect() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 16;
    let vectors: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let (x_train, y_train) = skewed_marker_set(12000, &vectors, &mut rng);
    let (x_dev, y_dev) = skewed_marker_set(1000, &vectors, &mut rng);
    let budget = TrainBudget {
        max_epochs: 20,
        patience: 4,
        batch_size: 32,
        learning_rate: 3e-3,
    };
    let config = ModelConfig {
        hyper: Hyperparameters {
            filters: 16,
            head_hidden: 16,
            ..Hyperparameters::default()
        },
        ..ModelConfig::new(Architecture::TextCnn, "synthetic", 11)
    };
    let run = |w: &ClassWeights| -> Result<Vec<ClassLabel>, String> {
        let trained =
            train_model(&config, (&x_train, &y_train), (&x_dev, &y_dev), w, &budget).map_err(|e| e.to_string())?;
        Ok(trained.dev_probs.iter().map(|p| p.argmax()).collect())
    };
    let uniform = run(&ClassWeights::UNIFORM)?;
    let clean_share = uniform.iter().filter(|&&p| p == ClassLabel::Clean).count() as f64 / uniform.len() as f64;
    let weighted = run(&ClassWeights::DEFAULT)?;
    let minority: Vec<usize> = (0..y_dev.len()).filter(|&i| y_dev[i] != ClassLabel::Clean).collect();
    let recall = minority.iter().filter(|&&i| weighted[i] == y_dev[i]).count() as f64 / minority.len() as f64;
    ensure!(
        clean_share >= 0.99,
        "uniform weights predict clean for {:.2}% of dev",
        100.0 * clean_share
    );
    ensure!(
        recall > 0.5,
        "weights (0.09, 0.95, 0.96) reach minority recall {recall:.3}"
    );
    Ok(format!(
        "uniform: {:.1}% clean predictions; weighted: minority recall {recall:.3}",
        100.0 * clean_share
    ))
}

fn brute_force_macro_f1(preds: &[ClassLabel], golds: &[ClassLabel]) -> f64 {
    let mut total = 0.0;
    for c in ClassLabel::ALL {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (p, g) in preds.iter().zip(golds) {
            match (*p == c, *g == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        if tp > 0.0 {
            total += 2.0 * tp / (2.0 * tp + fp + fn_);
        }
    }
    total / 3.0
}

fn f1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200);
        let golds: Vec<ClassLabel> = (0..n).map(|_| ClassLabel::ALL[rng.gen_range(0..3)]).collect();
        let preds: Vec<ClassLabel> = (0..n).map(|_| ClassLabel::ALL[rng.gen_range(0..3)]).collect();
        let got = f1_macro(&preds, &golds).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_force_macro_f1(&preds, &golds)).abs());
    }
    ensure!(worst <= 1e-12, "macro-F1 deviates by {worst:e}");
    use ClassLabel::*;
    let all_clean = f1_macro(&[Clean; 4], &[Clean, Clean, Offensive, Hate]).map_err(|e| e.to_string())?;
    ensure!(
        (all_clean - 2.0 / 9.0).abs() < 1e-12,
        "all-clean predictor scores {all_clean}"
    );
    Ok(format!(
        "max |diff| {worst:.1e}; all-clean on (c,c,o,h) = {all_clean:.4}"
    ))
}

const FUZZ_CHARS: &[char] = &[
    'a', 'ă', 'â', 'e', 'ê', 'i', 'o', 'ô', 'ơ', 'u', 'ư', 'y', 'd', 'đ', 'n', 'g', 'h', 't', 'c', 'q', 'A', 'Ơ', 'Ư',
    'Đ', 'É', 'Ỳ', 'à', 'ố', 'ữ', 'ỷ', '\u{300}', '\u{301}', '\u{303}', '\u{309}', '\u{323}', '\u{200B}', '\u{200D}',
    '\u{FEFF}', '\u{AD}', '\u{7}', ' ', ' ', '\t', '\n', '!', '?', '.', ',', ':', ')', '(', ';', '=', '<', '3', 'D',
    'P', '-', '_', '^', '😀', '❤', 'ß', 'İ', 'Σ',
];

fn normalization() -> Outcome {
    let config = NormalizationConfig::default();
    let example = clean("thíêt kê\u{0301}", &config);
    ensure!(example == "thiết kế", "example cleans to {example:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..10_000 {
        let len = rng.gen_range(0..40);
        let text: String = (0..len)
            .map(|_| *FUZZ_CHARS.choose(&mut rng).expect("non-empty"))
            .collect();
        let once = clean(&text, &config);
        let twice = clean(&once, &config);
        ensure!(once == twice, "case {case}: {text:?} -> {once:?} -> {twice:?}");
    }
    Ok("10000 fuzz cases idempotent; example exact".into())
}

fn split_stratification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sizes = vec![100, 101, 999, 1000, 4321, 10_000];
    sizes.extend((0..14).map(|_| rng.gen_range(100..=10_000)));
    for &n in &sizes {
        let skew = if rng.gen_bool(0.5) {
            [0.915, 0.05, 0.035]
        } else {
            let a: f64 = rng.gen_range(0.3..0.8);
            let b: f64 = rng.gen_range(0.05..(1.0 - a - 0.02));
            [a, b, 1.0 - a - b]
        };
        let mut labels: Vec<ClassLabel> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < skew[0] {
                    ClassLabel::Clean
                } else if u < skew[0] + skew[1] {
                    ClassLabel::Offensive
                } else {
                    ClassLabel::Hate
                }
            })
            .collect();
        for (i, c) in ClassLabel::ALL.into_iter().enumerate() {
            labels[2 * i] = c;
            labels[2 * i + 1] = c;
        }
        let rows: Vec<LabeledComment> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledComment::new(format!("r{i}"), "t", l))
            .collect();
        let seed = rng.gen();
        let (train, dev) = stratified_split(&rows, 0.9, seed).map_err(|e| e.to_string())?;
        ensure!(train.len() + dev.len() == n, "n={n}: sizes do not add up");
        for c in ClassLabel::ALL {
            let total = rows.iter().filter(|r| r.label == c).count() as f64;
            let in_dev = dev.iter().filter(|r| r.label == c).count() as f64;
            ensure!(
                (in_dev - 0.1 * total).abs() <= 1.0,
                "n={n}, {c}: {in_dev} of {total} in dev"
            );
        }
        let again = stratified_split(&rows, 0.9, seed).map_err(|e| e.to_string())?;
        ensure!(again == (train, dev), "n={n}: same seed gave a different split");
    }
    Ok(format!("{} dataset sizes from 100 to 10000", sizes.len()))
}

fn stub_report(id: &str, dev_f1: f64, labels: &[ClassLabel], probs: Vec<ProbabilityTriple>) -> SubmodelReport {
    SubmodelReport {
        id: id.into(),
        dev_f1,
        sample_ids: (0..labels.len()).map(|i| format!("s{i}")).collect(),
        labels: labels.to_vec(),
        dev_probs: probs,
        snapshot: None,
    }
}

/// Five sub-models; model `k` is confidently right everywhere except on
/// block `k` of the samples, where it hesitantly picks a wrong class.
fn complementary_reports(n: usize, rng: &mut ChaCha8Rng) -> (Vec<SubmodelReport>, f64) {
    let labels: Vec<ClassLabel> = (0..n).map(|_| ClassLabel::ALL[rng.gen_range(0..3)]).collect();
    let mut reports = Vec::new();
    let mut best = 0.0f64;
    for k in 0..5 {
        let probs: Vec<ProbabilityTriple> = labels
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let mut p = [0.0; 3];
                let noise = rng.gen_range(0.0..0.1);
                if i * 5 / n == k {
                    let wrong = (y.index() + 1 + rng.gen_range(0..2)) % 3;
                    p[wrong] = 0.45 + noise;
                    p[y.index()] = 0.35;
                } else {
                    p[y.index()] = 0.75 + noise;
                }
                let rest = 1.0 - p.iter().sum::<f64>();
                let empty: Vec<usize> = (0..3).filter(|&c| p[c] == 0.0).collect();
                for &c in &empty {
                    p[c] = rest / empty.len() as f64;
                }
                ProbabilityTriple(p)
            })
            .collect();
        let preds: Vec<ClassLabel> = probs.iter().map(|p| p.argmax()).collect();
        let f1 = f1_macro(&preds, &labels).expect("non-empty");
        best = best.max(f1);
        reports.push(stub_report(&format!("m{k}"), f1, &labels, probs));
    }
    (reports, best)
}

fn ensemble_plumbing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels: Vec<ClassLabel> = (0..30).map(|i| ClassLabel::ALL[i % 3]).collect();
    let scores = [0.6345, 0.7167, 0.6701, 0.67, 0.7356];
    let reports: Vec<SubmodelReport> = scores
        .iter()
        .enumerate()
        .map(|(k, &f1)| {
            let probs = (0..30)
                .map(|_| ProbabilityTriple(random_distribution(&mut rng, 0.05)))
                .collect();
            stub_report(&format!("stub{k}"), f1, &labels, probs)
        })
        .collect();
    let all: Vec<String> = reports.iter().map(|r| r.id.clone()).collect();
    let features = build_features(&all, &reports).map_err(|e| e.to_string())?;
    ensure!(
        features.rows.iter().all(|r| r.len() == 15),
        "feature rows are not 15 wide"
    );
    let gated = select_models(&reports, 0.67).map_err(|e| e.to_string())?;
    ensure!(!gated.contains(&"stub0".to_string()), "0.6345 passed the 0.67 gate");
    ensure!(gated.contains(&"stub1".to_string()), "0.7167 failed the 0.67 gate");
    ensure!(gated == ["stub1", "stub2", "stub4"], "gate kept {gated:?}");

    let (train_reports, best) = complementary_reports(600, &mut rng);
    let ids = select_models(&train_reports, 0.0).map_err(|e| e.to_string())?;
    let train_features = build_features(&ids, &train_reports).map_err(|e| e.to_string())?;
    let fit =
        train_stacker(&train_features, &ClassWeights::DEFAULT, &StackerConfig::default()).map_err(|e| e.to_string())?;
    let (fresh_reports, fresh_best) = complementary_reports(600, &mut rng);
    let fresh = build_features(&ids, &fresh_reports).map_err(|e| e.to_string())?;
    let preds: Vec<ClassLabel> = fit
        .model
        .predict(&fresh.rows)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|p| p.argmax())
        .collect();
    let fresh_f1 = f1_macro(&preds, &fresh.labels).map_err(|e| e.to_string())?;
    ensure!(
        fit.fit_f1 >= best - 0.01,
        "stacker {:.4} vs best single {best:.4}",
        fit.fit_f1
    );
    ensure!(
        fresh_f1 >= fresh_best - 0.01,
        "stacker on a fresh draw {fresh_f1:.4} vs best single {fresh_best:.4}"
    );
    Ok(format!(
        "15 features; gate kept {gated:?}; stacker {:.4} (fresh {fresh_f1:.4}) vs best single {best:.4}",
        fit.fit_f1
    ))
}

fn augmentation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
    let rows: Vec<LabeledComment> = (0..1000)
        .map(|i| {
            let len = rng.gen_range(1..=15);
            let text: Vec<&str> = (0..len)
                .map(|_| words[rng.gen_range(0..words.len())].as_str())
                .collect();
            LabeledComment::new(format!("f{i}"), text.join(" "), ClassLabel::ALL[rng.gen_range(0..3)])
        })
        .collect();
    let corpus: Vec<Vec<&str>> = rows.iter().map(|r| r.text.split(' ').collect()).collect();
    let vocab = Vocabulary::build(&corpus, 1).map_err(|e| e.to_string())?;
    let config = EncoderConfig {
        dim: 16,
        layers: 1,
        heads: 2,
        ff_dim: 32,
        max_len: 16,
        ..EncoderConfig::default()
    };
    let encoder = SentenceEncoder::new(vocab, config, &mut rng).map_err(|e| e.to_string())?;
    let norm = NormalizationConfig::default();
    let common = select_common_words(&rows, 3, &norm).map_err(|e| e.to_string())?;
    let mut substitutions = 0usize;
    for (i, row) in rows.iter().enumerate() {
        let tokens: Vec<&str> = row.text.split(' ').collect();
        let n_positions = tokens.len().min(2);
        let seed = 1000 + i as u64;
        let out = augment_sentence(row, &encoder, &common, n_positions, 3, seed).map_err(|e| e.to_string())?;
        ensure!(out.len() == 3, "row {i}: {} outputs", out.len());
        for sample in &out {
            ensure!(sample.label() == row.label, "row {i}: label changed");
            ensure!(sample.tokens.len() == tokens.len(), "row {i}: token count changed");
            ensure!(
                sample.replaced_positions.len() <= n_positions,
                "row {i}: too many replacements"
            );
            for (j, (new, old)) in sample.tokens.iter().zip(&tokens).enumerate() {
                if new != old {
                    ensure!(common.contains(new), "row {i}: substituted {new} is not a common word");
                    ensure!(
                        sample.replaced_positions.contains(&j),
                        "row {i}: position {j} changed unrecorded"
                    );
                    substitutions += 1;
                }
            }
        }
        let again = augment_sentence(row, &encoder, &common, n_positions, 3, seed).map_err(|e| e.to_string())?;
        ensure!(again == out, "row {i}: not reproducible under a fixed seed");
    }
    ensure!(substitutions > 0, "no position was ever substituted");
    Ok(format!(
        "1000 sentences, {substitutions} substitutions, {} common words",
        common.len()
    ))
}

fn mlm_encoder() -> Outcome {
    let norm = NormalizationConfig::default();
    let rows = load_dataset(&toy_dir().join("toy.tsv")).map_err(|e| e.to_string())?;
    let corpus: Vec<Vec<String>> = rows
        .iter()
        .map(|r| clean(&r.text, &norm).split_whitespace().map(String::from).collect())
        .collect();
    let config = EncoderConfig {
        epochs: 2,
        ..EncoderConfig::default()
    };
    let (encoder, report) = train_mlm_encoder(&corpus, &config).map_err(|e| e.to_string())?;
    let final_loss = report.final_holdout_loss();
    ensure!(
        final_loss < report.initial_holdout_loss,
        "held-out loss {final_loss:.4} not below initial {:.4}",
        report.initial_holdout_loss
    );
    let long: Vec<String> = (0..200).map(|i| format!("tok{i}")).collect();
    let inputs: Vec<Vec<String>> = vec![
        vec![],
        vec!["bạn".into()],
        vec!["never-seen".into(), "words".into()],
        corpus[0].clone(),
        long,
    ];
    for tokens in &inputs {
        let v = encoder.encode(tokens);
        ensure!(
            v.len() == 256,
            "encode gave width {} for {} tokens",
            v.len(),
            tokens.len()
        );
        ensure!(v.iter().all(|x| x.is_finite()), "non-finite sentence vector");
    }
    Ok(format!(
        "held-out loss {:.4} -> {final_loss:.4}; encode width 256",
        report.initial_holdout_loss
    ))
}

fn end_to_end_determinism() -> Outcome {
    let dirs = [
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    ];
    let mut manifests = Vec::new();
    let mut summary = String::new();
    for dir in &dirs {
        let mut config = ExperimentConfig::load(&toy_dir().join("experiment.toml")).map_err(|e| e.to_string())?;
        config.experiment.output_dir = dir.path().to_path_buf();
        config.experiment.threads = 1;
        let report = run_experiment(&config).map_err(|e| e.to_string())?;
        summary = format!(
            "{} cells, ensemble dev F1 {:.4}",
            report.cells.len(),
            report.ensemble_dev_f1
        );
        manifests.push(fs::read(dir.path().join(MANIFEST_FILE)).map_err(|e| e.to_string())?);
    }
    ensure!(manifests[0] == manifests[1], "manifests differ between identical runs");
    let text = String::from_utf8_lossy(&manifests[0]);
    for name in ["report.json", "ensemble.json"] {
        ensure!(
            text.contains(&format!("\"path\": \"{name}\"")),
            "{name} missing from manifest"
        );
    }
    let files = text.matches("\"sha256\"").count();
    Ok(format!("{files} hashed files identical; {summary}"))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "loss oracle",
            limit: Duration::from_secs(10),
            check: loss_oracle,
        },
        Criterion {
            id: 2,
            name: "gradient checks",
            limit: Duration::from_secs(120),
            check: gradient_checks,
        },
        Criterion {
            id: 3,
            name: "class-weight effect",
            limit: Duration::from_secs(300),
            check: class_weight_effect,
        },
        Criterion {
            id: 4,
            name: "F1 oracle",
            limit: Duration::from_secs(10),
            check: f1_oracle,
        },
        Criterion {
            id: 5,
            name: "normalization",
            limit: Duration::from_secs(30),
            check: normalization,
        },
        Criterion {
            id: 6,
            name: "split stratification",
            limit: Duration::from_secs(10),
            check: split_stratification,
        },
        Criterion {
            id: 7,
            name: "ensemble plumbing",
            limit: Duration::from_secs(120),
            check: ensemble_plumbing,
        },
        Criterion {
            id: 8,
            name: "augmentation",
            limit: Duration::from_secs(30),
            check: augmentation,
        },
        Criterion {
            id: 9,
            name: "MLM encoder",
            limit: Duration::from_secs(300),
            check: mlm_encoder,
        },
        Criterion {
            id: 10,
            name: "end-to-end determinism",
            limit: Duration::from_secs(600),
            check: end_to_end_determinism,
        },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| c.id.to_string() == *f || c.name.contains(f.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(format!("over time limit of {:?}; {detail}", c.limit)),
            other => other,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{status} [{:>2}] {:<24} {:>8.2}s  {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
