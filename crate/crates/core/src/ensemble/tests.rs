use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::eval::f1_macro;
use crate::textnorm::NormalizationConfig;
use crate::types::ClassWeights;
use ClassLabel::*;

fn report(id: &str, f1: f64, n: usize) -> SubmodelReport {
    SubmodelReport {
        id: id.into(),
        dev_f1: f1,
        sample_ids: (0..n).map(|i| format!("s{i}")).collect(),
        labels: (0..n).map(|i| ClassLabel::ALL[i % 3]).collect(),
        dev_probs: (0..n).map(|_| ProbabilityTriple([0.2, 0.3, 0.5])).collect(),
        snapshot: None,
    }
}

#[test]
fn gate_is_strict_and_sorted() {
    let reports = vec![
        report("sarnn/comment_tokenize", 0.7167, 3),
        report("bilstm/mlm-space", 0.6345, 3),
        report("textcnn/cbow", 0.67, 3),
        report("lstmcnn/cbow", 0.70, 3),
    ];
    let ids = select_models(&reports, 0.67).unwrap();
    assert_eq!(ids, vec!["lstmcnn/cbow", "sarnn/comment_tokenize"]);
    assert!(matches!(
        select_models(&reports, 1.0),
        Err(Error::NoModelsPassGate { .. })
    ));
    assert_eq!(select_models(&reports, 0.0).unwrap().len(), 4);
    assert!(select_models(&reports, 1.5).is_err());
    let err = select_models(&reports, 1.0).unwrap_err().to_string();
    assert!(err.contains("no models pass gate"), "{err}");
}

#[test]
fn features_concatenate_in_id_order() {
    let mut reports: Vec<SubmodelReport> = (0..5).map(|i| report(&format!("m{i}"), 0.9, 4)).collect();
    for (k, r) in reports.iter_mut().enumerate() {
        for p in &mut r.dev_probs {
            *p = ProbabilityTriple([0.1 * k as f64, 1.0 - 0.1 * k as f64, 0.0]);
        }
    }
    let ids = select_models(&reports, 0.5).unwrap();
    let f = build_features(&ids, &reports).unwrap();
    assert_eq!(f.width(), 15);
    assert!(f.rows.iter().all(|r| r.len() == 15));
    assert_eq!(f.rows[0][3], 0.1);

    let mut shuffled = reports.clone();
    shuffled.reverse();
    let mut rev_ids = ids.clone();
    rev_ids.reverse();
    assert_eq!(build_features(&rev_ids, &shuffled).unwrap(), f);
}

#[test]
fn single_model_features_are_identity() {
    let r = report("a", 0.9, 2);
    let f = build_features(&["a".to_string()], &[r]).unwrap();
    assert_eq!(f.rows[0], vec![0.2, 0.3, 0.5]);
}

#[test]
fn mismatched_samples_are_rejected() {
    let a = report("a", 0.9, 3);
    let mut b = report("b", 0.9, 3);
    b.sample_ids.swap(0, 1);
    let ids = vec!["a".to_string(), "b".to_string()];
    assert!(matches!(
        build_features(&ids, &[a.clone(), b]),
        Err(Error::SampleMismatch(_))
    ));
    let mut c = report("b", 0.9, 3);
    c.dev_probs.pop();
    assert!(build_features(&ids, &[a, c]).is_err());
}

fn argmax_features(n: usize, seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = ClassLabel::ALL[i % 3];
        let mut row = Vec::new();
        for m in 0..2 {
            let mut p = [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ];
            if m == 0 {
                p[label.index()] += 1.5;
            }
            let s: f64 = p.iter().sum();
            row.extend(p.map(|x| x / s));
        }
        rows.push(row);
        labels.push(label);
    }
    FeatureSet {
        model_ids: vec!["a".into(), "b".into()],
        sample_ids: (0..n).map(|i| i.to_string()).collect(),
        rows,
        labels,
    }
}

#[test]
fn stacker_fits_separable_features() {
    let f = argmax_features(300, 1);
    let fit = train_stacker(&f, &ClassWeights::DEFAULT, &StackerConfig::default()).unwrap();
    assert!(fit.fit_f1 >= 0.99, "fit {}", fit.fit_f1);
    assert_eq!(fit.model.input_width(), 6);
}

#[test]
fn stacker_rejects_single_class() {
    let mut f = argmax_features(30, 1);
    f.labels = vec![Hate; 30];
    assert!(matches!(
        train_stacker(&f, &ClassWeights::DEFAULT, &StackerConfig::default()),
        Err(Error::SingleClass)
    ));
}

#[test]
fn stacker_tolerates_missing_class() {
    let mut f = argmax_features(40, 2);
    for l in &mut f.labels {
        if *l == Hate {
            *l = Offensive;
        }
    }
    let cfg = StackerConfig {
        max_epochs: 20,
        ..StackerConfig::default()
    };
    assert!(train_stacker(&f, &ClassWeights::DEFAULT, &cfg).is_ok());
}

/// Two sub-models that are right on disjoint halves: confident when right,
/// hesitant when wrong.
fn complementary(n: usize) -> (Vec<SubmodelReport>, f64) {
    let labels: Vec<ClassLabel> = (0..n).map(|i| ClassLabel::ALL[i % 3]).collect();
    let row = |label: ClassLabel, right: bool| {
        let mut p = [0.1; 3];
        if right {
            p[label.index()] = 0.8;
        } else {
            let wrong = (label.index() + 1) % 3;
            p[wrong] = 0.6;
            p[label.index()] = 0.3;
        }
        ProbabilityTriple(p)
    };
    let mk = |id: &str, first_half: bool| SubmodelReport {
        id: id.into(),
        dev_f1: 0.0,
        sample_ids: (0..n).map(|i| i.to_string()).collect(),
        labels: labels.clone(),
        dev_probs: (0..n).map(|i| row(labels[i], (i < n / 2) == first_half)).collect(),
        snapshot: None,
    };
    let mut reports = vec![mk("a", true), mk("b", false)];
    let mut best = 0.0f64;
    for r in &mut reports {
        let preds: Vec<ClassLabel> = r.dev_probs.iter().map(|p| p.argmax()).collect();
        r.dev_f1 = f1_macro(&preds, &labels).unwrap();
        best = best.max(r.dev_f1);
    }
    (reports, best)
}

#[test]
fn stacker_combines_complementary_errors() {
    let (reports, best) = complementary(300);
    let ids = select_models(&reports, 0.0).unwrap();
    let f = build_features(&ids, &reports).unwrap();
    let fit = train_stacker(&f, &ClassWeights::UNIFORM, &StackerConfig::default()).unwrap();
    assert!(fit.fit_f1 >= best - 0.01, "stacker {} vs best {best}", fit.fit_f1);
}

struct Stub {
    id: String,
    probs: ProbabilityTriple,
}

impl SubmodelPredictor for Stub {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, cleaned: &[String]) -> Result<Vec<ProbabilityTriple>> {
        Ok(vec![self.probs; cleaned.len()])
    }
}

#[test]
fn stubbed_prediction_equals_stacker_on_feature_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stacker = StackerModel::new(vec!["a".into(), "b".into()], &mut rng).unwrap();
    let a = Stub {
        id: "a".into(),
        probs: ProbabilityTriple([0.2, 0.3, 0.5]),
    };
    let b = Stub {
        id: "b".into(),
        probs: ProbabilityTriple([0.6, 0.3, 0.1]),
    };
    let cfg = NormalizationConfig::default();
    let texts = vec!["Xin Chào".to_string()];
    let out = predict_ensemble(&stacker, &[&b, &a], &texts, &cfg).unwrap();
    let direct = stacker.predict(&[vec![0.2, 0.3, 0.5, 0.6, 0.3, 0.1]]).unwrap();
    assert_eq!(out[0].probs, direct[0]);
    assert_eq!(out[0].label, direct[0].argmax());
    assert!(matches!(
        predict_ensemble(&stacker, &[&a], &texts, &cfg),
        Err(Error::MissingSnapshot(_))
    ));
}

#[test]
fn severity_tie_break() {
    assert_eq!(ProbabilityTriple([0.9, 0.05, 0.05]).argmax(), Clean);
    assert_eq!(ProbabilityTriple([0.4, 0.4, 0.2]).argmax(), Offensive);
}

#[test]
fn stacker_snapshot_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stacker = StackerModel::new(vec!["a".into()], &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    stacker.save(&path).unwrap();
    let back = StackerModel::load(&path).unwrap();
    let row = vec![vec![0.1, 0.2, 0.7]];
    assert_eq!(back.predict(&row).unwrap(), stacker.predict(&row).unwrap());
}

proptest! {
    #[test]
    fn raising_the_gate_never_adds_models(
        scores in prop::collection::vec(0.0f64..1.0, 1..12),
        lo in 0.0f64..1.0,
        delta in 0.0f64..0.5,
    ) {
        let reports: Vec<SubmodelReport> = scores.iter().enumerate().map(|(i, &s)| report(&format!("m{i:02}"), s, 1)).collect();
        let hi = (lo + delta).min(1.0);
        let low = select_models(&reports, lo).unwrap_or_default();
        let high = select_models(&reports, hi).unwrap_or_default();
        prop_assert!(high.iter().all(|id| low.contains(id)));
    }

    #[test]
    fn stacker_outputs_are_distributions(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 6), 1..10)) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stacker = StackerModel::new(vec!["a".into(), "b".into()], &mut rng).unwrap();
        for p in stacker.predict(&rows).unwrap() {
            prop_assert!(p.is_valid());
        }
    }
}
