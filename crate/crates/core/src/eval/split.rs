use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{ClassLabel, LabeledComment, NUM_CLASSES};

const REMAINDER_TIE: f64 = 1e-9;

/// Per-class training counts: the total is `round(frac · n)`, each class
/// gets the floor of its exact share, and the leftover units go to the
/// largest remainders with ties broken by class index.
pub fn allocate(counts: [usize; NUM_CLASSES], train_frac: f64) -> [usize; NUM_CLASSES] {
    let n: usize = counts.iter().sum();
    let target = (train_frac * n as f64 + REMAINDER_TIE).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| train_frac * c as f64).collect();
    let mut alloc = [0usize; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        alloc[c] = ((exact[c] + REMAINDER_TIE).floor() as usize).min(counts[c]);
    }
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - alloc[a] as f64;
        let rb = exact[b] - alloc[b] as f64;
        if (ra - rb).abs() <= REMAINDER_TIE {
            a.cmp(&b)
        } else {
            rb.total_cmp(&ra)
        }
    });
    let mut left = target.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(NUM_CLASSES * 2) {
        if left == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Splits into (train, dev) with per-class largest-remainder allocation.
/// Samples are shuffled within each class by `seed`; both outputs keep the
/// original dataset order.
pub fn stratified_split(
    dataset: &[LabeledComment],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<LabeledComment>, Vec<LabeledComment>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid("train fraction must lie in (0, 1)"));
    }
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, row) in dataset.iter().enumerate() {
        by_class[row.label.index()].push(i);
    }
    for label in ClassLabel::ALL {
        let count = by_class[label.index()].len();
        if count < 2 {
            return Err(Error::ClassTooSmall {
                class: label.name(),
                count,
            });
        }
    }
    let counts = by_class.each_ref().map(Vec::len);
    let alloc = allocate(counts, train_frac);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; dataset.len()];
    for (c, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..alloc[c]] {
            in_train[i] = true;
        }
    }
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (row, t) in dataset.iter().zip(in_train) {
        if t {
            train.push(row.clone());
        } else {
            dev.push(row.clone());
        }
    }
    Ok((train, dev))
}
