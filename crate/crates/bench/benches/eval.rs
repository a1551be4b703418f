use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vihsd_core::eval::{confusion, f1_macro, stratified_split};
use vihsd_core::{ClassLabel, LabeledComment};

fn labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<ClassLabel> {
    (0..n)
        .map(|_| match rng.gen_range(0..1000) {
            0..=914 => ClassLabel::Clean,
            915..=964 => ClassLabel::Offensive,
            _ => ClassLabel::Hate,
        })
        .collect()
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let golds = labels(20_000, &mut rng);
    let preds = labels(20_000, &mut rng);
    c.bench_function("f1_macro_20k", |b| {
        b.iter(|| f1_macro(black_box(&preds), &golds).unwrap())
    });
    c.bench_function("confusion_20k", |b| {
        b.iter(|| confusion(black_box(&preds), &golds).unwrap())
    });
}

fn bench_split(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<LabeledComment> = labels(20_000, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, l)| LabeledComment::new(format!("r{i}"), "text", l))
        .collect();
    c.bench_function("stratified_split_20k", |b| {
        b.iter(|| stratified_split(black_box(&rows), 0.9, 7).unwrap().1.len())
    });
}

criterion_group!(benches, bench_metrics, bench_split);
criterion_main!(benches);
