//! Byte-pair-encoding merges learned over whitespace tokens.
//!
//! Each word is split into characters followed by a separate end-of-word
//! symbol `</w>`. Output pieces follow the `@@` continuation convention:
//! every piece except the last one of a word carries a trailing `@@`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BpeMergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeMergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::invalid(format!("duplicate merge {} {}", pair.0, pair.1)));
            }
        }
        Ok(BpeMergeTable { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Table restricted to its first `n` merges.
    pub fn truncated(&self, n: usize) -> Self {
        Self::new(self.merges[..n.min(self.merges.len())].to_vec()).expect("prefix of a valid table")
    }

    /// One `left right` pair per line, highest priority first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.merges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn parse(source: &str, path: &Path) -> Result<Self> {
        let mut merges = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => return Err(Error::parse(path, idx + 1, "expected `left right`")),
            }
        }
        Self::new(merges).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Splits one word into subword pieces.
    pub fn encode_word(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            symbols = merge_pair(&symbols, a, b);
        }
        finish_pieces(symbols)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    word.chars()
        .map(String::from)
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

fn merge_pair(symbols: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

fn finish_pieces(mut symbols: Vec<String>) -> Vec<String> {
    if symbols.last().is_some_and(|s| s == END_OF_WORD) {
        symbols.pop();
    } else if let Some(last) = symbols.last_mut() {
        last.truncate(last.len() - END_OF_WORD.len());
    }
    let n = symbols.len();
    symbols
        .into_iter()
        .enumerate()
        .map(|(i, s)| if i + 1 < n { s + CONTINUATION } else { s })
        .collect()
}

/// Learns up to `n_merges` merges by repeatedly merging the most frequent
/// adjacent symbol pair; ties go to the lexicographically smallest pair.
/// Stops early once no pair remains.
pub fn learn_bpe<S: AsRef<str>>(corpus: &[Vec<S>], n_merges: usize) -> Result<BpeMergeTable> {
    let mut word_counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for w in sentence {
            *word_counts.entry(w.as_ref()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::CorpusTooSmall("BPE corpus has no tokens".into()));
    }
    let mut words: Vec<(Vec<String>, usize)> = word_counts.into_iter().map(|(w, c)| (initial_symbols(w), c)).collect();
    words.sort();

    let mut merges = Vec::with_capacity(n_merges);
    for _ in 0..n_merges {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((&w[0], &w[1])).or_default() += count;
            }
        }
        let Some(((a, b), _)) = pair_counts
            .into_iter()
            .max_by(|x, y| x.1.cmp(&y.1).then_with(|| y.0.cmp(&x.0)))
        else {
            break;
        };
        let (a, b) = (a.to_string(), b.to_string());
        for (symbols, _) in words.iter_mut() {
            *symbols = merge_pair(symbols, &a, &b);
        }
        merges.push((a, b));
    }
    BpeMergeTable::new(merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn repeat(word: &str, n: usize) -> Vec<String> {
        vec![word.to_string(); n]
    }

    #[test]
    fn most_frequent_pair_first() {
        let table = learn_bpe(&[repeat("aaab", 10)], 1).unwrap();
        assert_eq!(table.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn zero_merges_is_empty() {
        assert!(learn_bpe(&[repeat("abc", 3)], 0).unwrap().is_empty());
    }

    #[test]
    fn ties_take_smallest_pair() {
        let mut corpus = repeat("ab", 5);
        corpus.extend(repeat("cd", 5));
        let table = learn_bpe(&[corpus], 1).unwrap();
        assert_eq!(table.merges(), &[("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(learn_bpe::<String>(&[], 3).is_err());
        assert!(learn_bpe::<String>(&[vec![]], 3).is_err());
    }

    #[test]
    fn encoding_without_merges_splits_characters() {
        let table = BpeMergeTable::default();
        assert_eq!(table.encode_word("abc"), vec!["a@@", "b@@", "c"]);
    }

    #[test]
    fn learned_merges_rebuild_frequent_words() {
        let table = learn_bpe(&[repeat("hay", 8)], 10).unwrap();
        assert_eq!(table.encode_word("hay"), vec!["hay"]);
        assert_eq!(table.encode_word("ha"), vec!["h@@", "a"]);
        assert_eq!(table.encode_word("yah"), vec!["y@@", "a@@", "h"]);
    }

    #[test]
    fn text_round_trip() {
        let table = learn_bpe(&[repeat("thiết", 4), repeat("kế", 2)], 6).unwrap();
        let back = BpeMergeTable::parse(&table.to_text(), Path::new("m.bpe")).unwrap();
        assert_eq!(back, table);
        assert!(BpeMergeTable::parse("a b c\n", Path::new("m.bpe")).is_err());
    }

    proptest! {
        #[test]
        fn more_merges_never_add_pieces(
            words in prop::collection::vec("[a-d]{1,6}", 1..30),
            probe in "[a-d]{1,8}",
            n in 1usize..25,
        ) {
            let table = learn_bpe(&[words], n).unwrap();
            let n = table.len();
            for k in 1..=n {
                let fewer = table.truncated(k - 1).encode_word(&probe).len();
                let more = table.truncated(k).encode_word(&probe).len();
                prop_assert!(more <= fewer);
            }
        }
    }
}
