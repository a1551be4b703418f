//! Lexicon-based word segmentation: multi-syllable words are found by
//! greedy longest match and their syllables joined with `_`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textnorm::{lowercase, normalize_encoding};

pub const JOINER: char = '_';

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    words: HashSet<Vec<String>>,
    max_syllables: usize,
}

impl Lexicon {
    /// Entries are composed and lowercased to match cleaned text.
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lexicon = Lexicon::default();
        for entry in entries {
            let syllables: Vec<String> = lowercase(&normalize_encoding(entry.as_ref()))
                .split_whitespace()
                .map(String::from)
                .collect();
            if syllables.len() >= 2 {
                lexicon.max_syllables = lexicon.max_syllables.max(syllables.len());
                lexicon.words.insert(syllables);
            }
        }
        lexicon
    }

    /// One word per line, syllables separated by spaces.
    pub fn load(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(source.lines()))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, syllables: &[&str]) -> bool {
        // HashSet<Vec<String>> can't be probed with &[&str] directly
        let owned: Vec<String> = syllables.iter().map(|s| s.to_string()).collect();
        self.words.contains(&owned)
    }

    pub fn segment(&self, text: &str) -> Vec<String> {
        let syllables: Vec<&str> = text.split_whitespace().collect();
        let mut out = Vec::with_capacity(syllables.len());
        let mut i = 0;
        while i < syllables.len() {
            let longest = self.max_syllables.min(syllables.len() - i);
            let matched = (2..=longest).rev().find(|&len| self.contains(&syllables[i..i + len]));
            match matched {
                Some(len) => {
                    out.push(syllables[i..i + len].join(&JOINER.to_string()));
                    i += len;
                }
                None => {
                    out.push(syllables[i].to_string());
                    i += 1;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joins_known_words() {
        let lex = Lexicon::new(["thiết kế"]);
        assert_eq!(lex.segment("thiết kế"), vec!["thiết_kế"]);
        assert_eq!(lex.segment("đẹp thiết kế quá"), vec!["đẹp", "thiết_kế", "quá"]);
    }

    #[test]
    fn prefers_longest_match() {
        let lex = Lexicon::new(["hà nội", "hà nội mới"]);
        assert_eq!(lex.segment("hà nội mới đẹp"), vec!["hà_nội_mới", "đẹp"]);
        assert_eq!(lex.segment("hà nội đẹp"), vec!["hà_nội", "đẹp"]);
    }

    #[test]
    fn entries_are_normalized() {
        let lex = Lexicon::new(["Thíêt Kê\u{0301}", "single"]);
        assert_eq!(lex.len(), 1);
        assert_eq!(lex.segment("thiết kế"), vec!["thiết_kế"]);
    }
}
