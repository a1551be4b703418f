//! Multi-character emoticons mapped to single emoji codepoints.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use unicode_normalization::char::is_combining_mark;

use crate::error::{Error, Result};

/// Built-in emoticon table. Keys are matched case-insensitively.
const DEFAULT_ENTRIES: &[(&str, char)] = &[
    (":)", '\u{1F642}'),
    (":-)", '\u{1F642}'),
    ("=)", '\u{1F642}'),
    (":]", '\u{1F642}'),
    ("=]", '\u{1F642}'),
    (":))", '\u{1F604}'),
    ("=))", '\u{1F606}'),
    (":(", '\u{1F641}'),
    (":-(", '\u{1F641}'),
    ("=(", '\u{1F641}'),
    (":[", '\u{1F641}'),
    ("=[", '\u{1F641}'),
    (":((", '\u{1F622}'),
    ("=((", '\u{1F622}'),
    (":'(", '\u{1F622}'),
    (":D", '\u{1F600}'),
    (":-D", '\u{1F600}'),
    ("=D", '\u{1F600}'),
    (":P", '\u{1F61B}'),
    (":-P", '\u{1F61B}'),
    (";)", '\u{1F609}'),
    (";-)", '\u{1F609}'),
    (":*", '\u{1F618}'),
    (":|", '\u{1F610}'),
    (":v", '\u{1F60B}'),
    (":3", '\u{1F63A}'),
    (">:(", '\u{1F620}'),
    (":@", '\u{1F621}'),
    ("<3", '\u{2764}'),
    ("</3", '\u{1F494}'),
    ("^^", '\u{1F60A}'),
    ("^_^", '\u{1F60A}'),
    ("-_-", '\u{1F611}'),
    ("T_T", '\u{1F62D}'),
    ("@@", '\u{1F635}'),
];

fn fold(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Ordered emoticon → codepoint map with longest-match lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmoticonDictionary {
    entries: Vec<(String, char)>,
    lookup: HashMap<Vec<char>, char>,
    max_key_len: usize,
}

impl EmoticonDictionary {
    /// Validates and indexes `entries`. Keys must be at least two
    /// characters, contain no whitespace and must not contain any of the
    /// replacement codepoints; values must not be letters, digits or
    /// whitespace.
    pub fn new(entries: Vec<(String, char)>) -> Result<Self> {
        let mut lookup = HashMap::new();
        let mut max_key_len = 0;
        for (key, value) in &entries {
            let folded: Vec<char> = key.chars().map(fold).collect();
            if folded.len() < 2 {
                return Err(Error::invalid(format!(
                    "emoticon key `{key}` must have at least 2 characters"
                )));
            }
            if folded.iter().any(|c| c.is_whitespace()) {
                return Err(Error::invalid(format!("emoticon key `{key}` contains whitespace")));
            }
            if value.is_alphanumeric() || value.is_whitespace() {
                return Err(Error::invalid(format!(
                    "emoticon value for `{key}` must be a symbol, got `{value}`"
                )));
            }
            if lookup.insert(folded.clone(), *value).is_some() {
                return Err(Error::invalid(format!("duplicate emoticon key `{key}`")));
            }
            max_key_len = max_key_len.max(folded.len());
        }
        for (key, _) in &entries {
            if let Some((_, v)) = entries.iter().find(|(_, v)| key.contains(*v)) {
                return Err(Error::invalid(format!(
                    "emoticon key `{key}` contains replacement value `{v}`"
                )));
            }
        }
        Ok(EmoticonDictionary {
            entries,
            lookup,
            max_key_len,
        })
    }

    pub fn empty() -> Self {
        EmoticonDictionary {
            entries: Vec::new(),
            lookup: HashMap::new(),
            max_key_len: 0,
        }
    }

    pub fn builtin() -> Self {
        let entries = DEFAULT_ENTRIES.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self::new(entries).expect("builtin emoticon table is valid")
    }

    /// Parses `key<TAB>value` lines; `#` starts a comment line. The value is
    /// either the literal codepoint or `U+XXXX`.
    pub fn parse(source: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, line_no, "expected `key<TAB>value`"))?;
            let value = parse_codepoint(value.trim())
                .ok_or_else(|| Error::parse(path, line_no, "value must be a single codepoint"))?;
            entries.push((key.to_string(), value));
        }
        Self::new(entries).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source, path)
    }

    pub fn entries(&self) -> &[(String, char)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = char> + '_ {
        self.entries.iter().map(|(_, v)| *v)
    }

    /// Longest key matching at `pos`, as (key length, replacement).
    ///
    /// A match never splits a letter run or a base character from its
    /// combining marks: a key is not followed by a combining mark, and a
    /// key edge that is a letter or digit must not touch another one.
    fn match_at(&self, folded: &[char], pos: usize) -> Option<(usize, char)> {
        let longest = self.max_key_len.min(folded.len() - pos);
        let glued = |c: Option<&char>| c.is_some_and(|c| c.is_alphanumeric() || is_combining_mark(*c));
        let before = pos.checked_sub(1).and_then(|p| folded.get(p));
        (2..=longest).rev().find_map(|len| {
            let key = &folded[pos..pos + len];
            let value = self.lookup.get(key)?;
            let after = folded.get(pos + len);
            if after.is_some_and(|c| is_combining_mark(*c)) {
                return None;
            }
            if key[len - 1].is_alphanumeric() && glued(after) {
                return None;
            }
            if key[0].is_alphanumeric() && glued(before) {
                return None;
            }
            Some((len, *value))
        })
    }
}

impl Default for EmoticonDictionary {
    fn default() -> Self {
        Self::builtin()
    }
}

fn parse_codepoint(s: &str) -> Option<char> {
    if let Some(hex) = s.strip_prefix("U+").or_else(|| s.strip_prefix("u+")) {
        return u32::from_str_radix(hex, 16).ok().and_then(char::from_u32);
    }
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

/// Single left-to-right scan replacing the longest dictionary key found at
/// each position.
pub fn canonicalize_emoticons(text: &str, dict: &EmoticonDictionary) -> String {
    if dict.is_empty() {
        return text.to_string();
    }
    let chars: Vec<char> = text.chars().collect();
    let folded: Vec<char> = chars.iter().copied().map(fold).collect();
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    while pos < chars.len() {
        match dict.match_at(&folded, pos) {
            Some((len, value)) => {
                out.push(value);
                pos += len;
            }
            None => {
                out.push(chars[pos]);
                pos += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict(entries: &[(&str, char)]) -> EmoticonDictionary {
        EmoticonDictionary::new(entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap()
    }

    #[test]
    fn replaces_frown() {
        let d = dict(&[(":(", '\u{1F641}')]);
        assert_eq!(canonicalize_emoticons("hay :(", &d), "hay \u{1F641}");
    }

    #[test]
    fn empty_dictionary_is_identity() {
        assert_eq!(canonicalize_emoticons("abc", &EmoticonDictionary::empty()), "abc");
    }

    #[test]
    fn scan_order_is_left_to_right() {
        // stand-in symbol for the placeholder value X
        let d = dict(&[(":(", '\u{2716}')]);
        assert_eq!(canonicalize_emoticons("::((", &d), ":\u{2716}(");
    }

    #[test]
    fn longest_match_wins() {
        let d = dict(&[(":(", '\u{1F641}'), (":((", '\u{1F622}')]);
        assert_eq!(canonicalize_emoticons(":(((", &d), "\u{1F622}(");
        assert_eq!(canonicalize_emoticons(":(", &d), "\u{1F641}");
    }

    #[test]
    fn matching_ignores_case() {
        let d = EmoticonDictionary::builtin();
        assert_eq!(canonicalize_emoticons(":d :D", &d), "\u{1F600} \u{1F600}");
        assert_eq!(canonicalize_emoticons("t_t", &d), "\u{1F62D}");
    }

    #[test]
    fn matches_do_not_split_words_or_marks() {
        let d = EmoticonDictionary::builtin();
        assert_eq!(canonicalize_emoticons("a:Db", &d), "a:Db");
        assert_eq!(canonicalize_emoticons("a:D b", &d), "a\u{1F600} b");
        assert_eq!(canonicalize_emoticons(":D\u{0301}", &d), ":D\u{0301}");
        assert_eq!(canonicalize_emoticons(":(\u{0301}", &d), ":(\u{0301}");
        assert_eq!(canonicalize_emoticons("hay:(", &d), "hay\u{1F641}");
    }

    #[test]
    fn rejects_bad_entries() {
        let bad = |k: &str, v: char| EmoticonDictionary::new(vec![(k.to_string(), v)]).is_err();
        assert!(bad(":", '\u{1F641}'));
        assert!(bad(": (", '\u{1F641}'));
        assert!(bad(":(", 'a'));
        assert!(EmoticonDictionary::new(vec![(":(".into(), '\u{1F641}'), (":(".into(), '\u{1F622}')]).is_err());
        assert!(EmoticonDictionary::new(vec![(":(".into(), '\u{1F641}'), ("\u{1F641}!".into(), '\u{1F622}')]).is_err());
    }

    #[test]
    fn parses_file_format() {
        let src = "# comment\n:(\tU+1F641\n<3\t\u{2764}\n";
        let d = EmoticonDictionary::parse(src, Path::new("emo.tsv")).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(canonicalize_emoticons("<3 :(", &d), "\u{2764} \u{1F641}");
        let err = EmoticonDictionary::parse(":( 1F641\n", Path::new("emo.tsv")).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn builtin_has_about_thirty_entries() {
        assert!(EmoticonDictionary::builtin().len() >= 30);
    }
}
