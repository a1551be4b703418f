use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vihsd_core::embed::Encoded;
use vihsd_core::models::{weighted_ce_node, Architecture, Classifier, InputShape, ModelConfig};
use vihsd_core::nn::{Graph, Tensor};
use vihsd_core::{ClassLabel, ClassWeights};

fn batch(n: usize, l: usize, d: usize) -> (Encoded, Vec<ClassLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = (0..n * l * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Encoded::Sequences {
        data: Tensor::new(vec![n, l, d], data),
        lengths: (0..n).map(|_| rng.gen_range(l / 2..=l)).collect(),
    };
    let labels = (0..n).map(|i| ClassLabel::ALL[i % 3]).collect();
    (x, labels)
}

fn bench_train_step(c: &mut Criterion) {
    let (x, labels) = batch(32, 32, 64);
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for arch in Architecture::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Classifier::new(ModelConfig::new(arch, "bench", 0), InputShape::of(&x), &mut rng).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(arch), &model, |b, model| {
            b.iter(|| {
                let mut g = Graph::new();
                let p = model.params().bind(&mut g);
                let probs = model.forward(&mut g, &p, &x, Some(&mut rng)).unwrap();
                let loss = weighted_ce_node(&mut g, probs, &labels, &ClassWeights::DEFAULT);
                g.backward(loss)
            })
        });
    }
    group.finish();
}

fn bench_predict(c: &mut Criterion) {
    let (x, _) = batch(128, 32, 64);
    let mut group = c.benchmark_group("predict");
    group.sample_size(10);
    for arch in Architecture::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Classifier::new(ModelConfig::new(arch, "bench", 0), InputShape::of(&x), &mut rng).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(arch), &model, |b, model| {
            b.iter(|| model.predict(&x, 64).unwrap().len())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_train_step, bench_predict);
criterion_main!(benches);
