//! Masked-word augmentation: positions of a sentence are masked and filled
//! with encoder proposals drawn from words common to all three classes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::SentenceEncoder;
use crate::error::{Error, Result};
use crate::textnorm::{clean, NormalizationConfig};
use crate::types::{ClassLabel, LabeledComment, NUM_CLASSES};

/// Ranks replacement candidates for a masked position.
pub trait MaskProposer {
    /// Candidates by descending probability.
    fn propose(&self, tokens: &[String], position: usize) -> Result<Vec<String>>;
}

impl MaskProposer for SentenceEncoder {
    fn propose(&self, tokens: &[String], position: usize) -> Result<Vec<String>> {
        Ok(self
            .propose_masked(tokens, position, usize::MAX)?
            .into_iter()
            .map(|(t, _)| t)
            .collect())
    }
}

/// Tokens occurring at least `min_per_class` times in every class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonWordSet {
    pub min_per_class: usize,
    words: BTreeSet<String>,
    counts: BTreeMap<String, [usize; NUM_CLASSES]>,
}

impl CommonWordSet {
    pub fn from_counts(counts: BTreeMap<String, [usize; NUM_CLASSES]>, min_per_class: usize) -> Self {
        let words = counts
            .iter()
            .filter(|(_, c)| c.iter().all(|&n| n >= min_per_class))
            .map(|(w, _)| w.clone())
            .collect();
        CommonWordSet {
            min_per_class,
            words,
            counts,
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn words(&self) -> &BTreeSet<String> {
        &self.words
    }

    /// Per-class occurrence counts of every token seen.
    pub fn counts(&self) -> &BTreeMap<String, [usize; NUM_CLASSES]> {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Counts space tokens of the cleaned texts per class.
pub fn select_common_words(
    dataset: &[LabeledComment],
    min_per_class: usize,
    config: &NormalizationConfig,
) -> Result<CommonWordSet> {
    if min_per_class == 0 {
        return Err(Error::invalid("min_per_class must be at least 1"));
    }
    let mut present = [false; NUM_CLASSES];
    let mut counts: BTreeMap<String, [usize; NUM_CLASSES]> = BTreeMap::new();
    for row in dataset {
        let c = row.label.index();
        present[c] = true;
        for token in clean(&row.text, config).split_whitespace() {
            counts.entry(token.to_string()).or_default()[c] += 1;
        }
    }
    if let Some(missing) = ClassLabel::ALL.into_iter().find(|l| !present[l.index()]) {
        return Err(Error::MissingClass(missing.name()));
    }
    Ok(CommonWordSet::from_counts(counts, min_per_class))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub source: LabeledComment,
    pub tokens: Vec<String>,
    /// Positions whose token differs from the source.
    pub replaced_positions: BTreeSet<usize>,
}

impl AugmentedSample {
    pub fn label(&self) -> ClassLabel {
        self.source.label
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// `n_outputs` variants of a sample whose text is already cleaned. Each
/// variant picks `n_positions` distinct positions; each picked position is
/// masked in the source sentence and filled with the best-ranked proposal
/// that is a common word and differs from the original, or keeps the
/// original when no proposal qualifies.
pub fn augment_sentence<P: MaskProposer + ?Sized>(
    sample: &LabeledComment,
    proposer: &P,
    common: &CommonWordSet,
    n_positions: usize,
    n_outputs: usize,
    seed: u64,
) -> Result<Vec<AugmentedSample>> {
    if common.is_empty() {
        return Err(Error::invalid("common-word set is empty"));
    }
    let tokens: Vec<String> = sample.text.split_whitespace().map(String::from).collect();
    if n_positions == 0 || n_positions > tokens.len() {
        return Err(Error::invalid(format!(
            "n_positions {n_positions} must lie in [1, {}]",
            tokens.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: HashMap<usize, Option<String>> = HashMap::new();
    let mut out = Vec::with_capacity(n_outputs);
    for _ in 0..n_outputs {
        let mut picks = index::sample(&mut rng, tokens.len(), n_positions).into_vec();
        picks.sort_unstable();
        let mut new_tokens = tokens.clone();
        let mut replaced = BTreeSet::new();
        for pos in picks {
            let choice = match cache.get(&pos) {
                Some(c) => c.clone(),
                None => {
                    let c = proposer
                        .propose(&tokens, pos)?
                        .into_iter()
                        .find(|t| *t != tokens[pos] && common.contains(t));
                    cache.insert(pos, c.clone());
                    c
                }
            };
            if let Some(word) = choice {
                new_tokens[pos] = word;
                replaced.insert(pos);
            }
        }
        out.push(AugmentedSample {
            source: sample.clone(),
            tokens: new_tokens,
            replaced_positions: replaced,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub n_positions: usize,
    pub n_outputs: usize,
    pub min_per_class: usize,
    pub classes: Vec<ClassLabel>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            n_positions: 1,
            n_outputs: 4,
            min_per_class: 3,
            classes: vec![ClassLabel::Offensive, ClassLabel::Hate],
            seed: 0,
        }
    }
}

/// Augments every cleaned row whose class is in `config.classes` and that
/// has at least `n_positions` tokens. Row `i` uses seed `config.seed + i`;
/// the new rows get ids `<id>~aug<k>`.
pub fn augment_dataset<P: MaskProposer + ?Sized>(
    cleaned: &[LabeledComment],
    proposer: &P,
    common: &CommonWordSet,
    config: &AugmentConfig,
) -> Result<Vec<LabeledComment>> {
    let mut out = Vec::new();
    for (i, row) in cleaned.iter().enumerate() {
        if !config.classes.contains(&row.label) || row.text.split_whitespace().count() < config.n_positions {
            continue;
        }
        let variants = augment_sentence(
            row,
            proposer,
            common,
            config.n_positions,
            config.n_outputs,
            config.seed.wrapping_add(i as u64),
        )?;
        for (k, v) in variants.into_iter().enumerate() {
            out.push(LabeledComment::new(format!("{}~aug{k}", row.id), v.text(), row.label));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassLabel::*;

    /// Proposes a fixed ranking regardless of context.
    struct Fixed(Vec<String>);

    impl MaskProposer for Fixed {
        fn propose(&self, tokens: &[String], position: usize) -> Result<Vec<String>> {
            if position >= tokens.len() {
                return Err(Error::invalid("out of range"));
            }
            Ok(self.0.clone())
        }
    }

    fn fixed(words: &[&str]) -> Fixed {
        Fixed(words.iter().map(|w| w.to_string()).collect())
    }

    fn row(text: &str, label: ClassLabel) -> LabeledComment {
        LabeledComment::new(text, text, label)
    }

    fn common(words: &[&str]) -> CommonWordSet {
        let counts = words.iter().map(|w| (w.to_string(), [1, 1, 1])).collect();
        CommonWordSet::from_counts(counts, 1)
    }

    #[test]
    fn common_words_need_every_class() {
        let cfg = NormalizationConfig::default();
        let data = vec![
            row("làm gì vậy", Clean),
            row("làm vl", Offensive),
            row("làm đồ ngu", Hate),
            row("vậy thôi", Clean),
        ];
        let set = select_common_words(&data, 1, &cfg).unwrap();
        assert!(set.contains("làm"));
        assert!(!set.contains("vậy"));
        assert!(!set.contains("vl"));
        assert_eq!(set.counts()["vậy"], [2, 0, 0]);
        assert!(select_common_words(&data, 2, &cfg).unwrap().is_empty());
        assert!(matches!(
            select_common_words(&data[..2], 1, &cfg),
            Err(Error::MissingClass("hate"))
        ));
    }

    #[test]
    fn outputs_keep_length_and_label() {
        let sample = row("nhổn làm gắt vl", Offensive);
        let out = augment_sentence(&sample, &fixed(&["qá", "làm", "vl"]), &common(&["qá", "vl"]), 1, 4, 3).unwrap();
        assert_eq!(out.len(), 4);
        for o in &out {
            assert_eq!(o.tokens.len(), 4);
            assert_eq!(o.label(), Offensive);
            for &p in &o.replaced_positions {
                assert!(["qá", "vl"].contains(&o.tokens[p].as_str()));
            }
        }
    }

    #[test]
    fn zero_outputs_and_forced_fallback() {
        let sample = row("a b c", Hate);
        let prop = fixed(&["a", "b", "c"]);
        assert!(augment_sentence(&sample, &prop, &common(&["a"]), 1, 0, 1)
            .unwrap()
            .is_empty());
        let out = augment_sentence(&sample, &prop, &common(&["a", "b", "c"]), 3, 2, 1).unwrap();
        for o in out {
            assert_ne!(o.tokens, vec!["a", "b", "c"]);
        }
        let out = augment_sentence(&sample, &fixed(&["z"]), &common(&["a", "b", "c"]), 3, 2, 1).unwrap();
        for o in out {
            assert_eq!(o.tokens, vec!["a", "b", "c"]);
            assert!(o.replaced_positions.is_empty());
        }
    }

    #[test]
    fn preconditions() {
        let sample = row("a b", Clean);
        let prop = fixed(&["x"]);
        let empty = CommonWordSet::from_counts(BTreeMap::new(), 1);
        assert!(augment_sentence(&sample, &prop, &empty, 1, 1, 0).is_err());
        assert!(augment_sentence(&sample, &prop, &common(&["x"]), 3, 1, 0).is_err());
        assert!(augment_sentence(&sample, &prop, &common(&["x"]), 0, 1, 0).is_err());
    }

    #[test]
    fn dataset_augmentation_targets_minority_classes() {
        let data = vec![row("a b", Clean), row("c d", Offensive), row("e", Hate)];
        let out = augment_dataset(&data, &fixed(&["x"]), &common(&["x"]), &AugmentConfig::default()).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|r| r.label != Clean));
        assert_eq!(out[0].id, "c d~aug0");
    }

    proptest! {
        #[test]
        fn invariants_hold(
            words in prop::collection::vec("[a-e]{1,2}", 1..10),
            n_pos in 1usize..4,
            seed in any::<u64>(),
        ) {
            let n_pos = n_pos.min(words.len());
            let sample = row(&words.join(" "), Hate);
            let prop = fixed(&["a", "bb", "zz", "c"]);
            let set = common(&["a", "bb", "c"]);
            let out = augment_sentence(&sample, &prop, &set, n_pos, 3, seed).unwrap();
            let again = augment_sentence(&sample, &prop, &set, n_pos, 3, seed).unwrap();
            prop_assert_eq!(&out, &again);
            for o in out {
                prop_assert_eq!(o.tokens.len(), words.len());
                prop_assert!(o.replaced_positions.len() <= n_pos);
                for (i, t) in o.tokens.iter().enumerate() {
                    if o.replaced_positions.contains(&i) {
                        prop_assert!(set.contains(t));
                        prop_assert_ne!(t, &words[i]);
                    } else {
                        prop_assert_eq!(t, &words[i]);
                    }
                }
            }
        }
    }
}
