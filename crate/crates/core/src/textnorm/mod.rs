//! Deterministic canonicalization of raw social-media comments.
//!
//! [`clean`] applies, in order: encoding/tone normalization, emoticon
//! canonicalization, invisible-character removal (with optional spacing
//! around punctuation and emoji) and lowercasing. The same function is used
//! on training data and on inference inputs.

mod emoticon;
mod tone;

use std::collections::BTreeSet;

use unicode_normalization::char::is_combining_mark;

pub use emoticon::{canonicalize_emoticons, EmoticonDictionary};
pub use tone::normalize_encoding;

use crate::error::{Error, Result};

/// Codepoints removed by default next to the `Cc` category.
const DEFAULT_INVISIBLES: &[char] = &[
    '\u{00AD}', // soft hyphen
    '\u{200B}', // zero-width space
    '\u{200C}', // zero-width non-joiner
    '\u{200D}', // zero-width joiner
    '\u{2060}', // word joiner
    '\u{FEFF}', // byte-order mark
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizationConfig {
    invisible_charset: BTreeSet<char>,
    emoticons: EmoticonDictionary,
    pub separate_punct: bool,
}

impl NormalizationConfig {
    pub fn new(invisible_charset: BTreeSet<char>, emoticons: EmoticonDictionary, separate_punct: bool) -> Result<Self> {
        if let Some(c) = invisible_charset
            .iter()
            .find(|c| c.is_alphanumeric() || matches!(c, ' ' | '\t' | '\n'))
        {
            return Err(Error::invalid(format!(
                "invisible charset must not contain letters, digits or whitespace (U+{:04X})",
                *c as u32
            )));
        }
        if let Some(v) = emoticons.values().find(|v| invisible_charset.contains(v)) {
            return Err(Error::invalid(format!(
                "emoticon value U+{:04X} is in the invisible charset",
                v as u32
            )));
        }
        Ok(NormalizationConfig {
            invisible_charset,
            emoticons,
            separate_punct,
        })
    }

    pub fn default_invisible_charset() -> BTreeSet<char> {
        (0u32..=0x9F)
            .filter_map(char::from_u32)
            .filter(|c| c.is_control() && !matches!(c, '\t' | '\n'))
            .chain(DEFAULT_INVISIBLES.iter().copied())
            .collect()
    }

    pub fn with_emoticons(emoticons: EmoticonDictionary, separate_punct: bool) -> Result<Self> {
        Self::new(Self::default_invisible_charset(), emoticons, separate_punct)
    }

    pub fn invisible_charset(&self) -> &BTreeSet<char> {
        &self.invisible_charset
    }

    pub fn emoticons(&self) -> &EmoticonDictionary {
        &self.emoticons
    }
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self::with_emoticons(EmoticonDictionary::builtin(), true).expect("default normalization config is valid")
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Word,
    Space,
    Symbol,
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphanumeric() {
        CharClass::Word
    } else {
        CharClass::Symbol
    }
}

/// Removes every codepoint of the configured invisible set, optionally
/// separates letter runs from punctuation and emoji, and collapses
/// whitespace runs to single spaces.
///
/// Removing a character can bring a combining mark next to its base letter
/// or splice an emoticon together, so when anything was removed the
/// encoding and emoticon passes are re-run over the joined text.
pub fn strip_invisible(text: &str, config: &NormalizationConfig) -> String {
    let kept: String = text.chars().filter(|c| !config.invisible_charset.contains(c)).collect();
    let text = if kept.len() != text.len() {
        canonicalize_emoticons(&normalize_encoding(&kept), &config.emoticons)
    } else {
        kept
    };

    let mut out = String::with_capacity(text.len() + 8);
    // class of the last non-mark character, marks inherit it
    let mut prev = CharClass::Space;
    for c in text.chars() {
        if is_combining_mark(c) && prev != CharClass::Space {
            out.push(c);
            continue;
        }
        let class = classify(c);
        match class {
            CharClass::Space => {
                if prev != CharClass::Space {
                    out.push(' ');
                }
            }
            _ => {
                let boundary = matches!(
                    (prev, class),
                    (CharClass::Word, CharClass::Symbol) | (CharClass::Symbol, CharClass::Word)
                );
                if boundary && config.separate_punct {
                    out.push(' ');
                }
                out.push(c);
            }
        }
        prev = class;
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

pub fn lowercase(text: &str) -> String {
    text.to_lowercase()
}

/// Full cleaning pipeline. Idempotent: `clean(clean(x)) == clean(x)`.
pub fn clean(text: &str, config: &NormalizationConfig) -> String {
    let composed = normalize_encoding(text);
    let emoticons = canonicalize_emoticons(&composed, &config.emoticons);
    let visible = strip_invisible(&emoticons, config);
    lowercase(&visible)
}

/// File-level description of a [`NormalizationConfig`]: an optional
/// emoticon dictionary (the built-in one otherwise) and the spacing flag.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emoticons: Option<std::path::PathBuf>,
    #[serde(default = "default_separate_punct")]
    pub separate_punct: bool,
}

fn default_separate_punct() -> bool {
    true
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            emoticons: None,
            separate_punct: true,
        }
    }
}

impl NormalizationSpec {
    /// Relative dictionary paths are resolved against `base`.
    pub fn build(&self, base: &std::path::Path) -> Result<NormalizationConfig> {
        let dict = match &self.emoticons {
            Some(p) if p.is_absolute() => EmoticonDictionary::load(p)?,
            Some(p) => EmoticonDictionary::load(&base.join(p))?,
            None => EmoticonDictionary::builtin(),
        };
        NormalizationConfig::with_emoticons(dict, self.separate_punct)
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn fragment() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("thíêt".to_string()),
            Just("kê\u{0301}".to_string()),
            Just("Người".to_string()),
            Just("VL".to_string()),
            Just(":(".to_string()),
            Just("=))".to_string()),
            Just(":D".to_string()),
            Just("\u{200B}".to_string()),
            Just("\u{00AD}".to_string()),
            Just("\u{0301}".to_string()),
            Just("\u{0323}".to_string()),
            Just("\u{0302}".to_string()),
            Just(" ".to_string()),
            Just("\t".to_string()),
            Just("!".to_string()),
            Just("\u{1F641}".to_string()),
            "[a-zA-ZđĐ]{1,4}",
            any::<char>().prop_map(|c| c.to_string()),
        ]
    }

    fn comment() -> impl Strategy<Value = String> {
        prop::collection::vec(fragment(), 0..12).prop_map(|parts| parts.concat())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn clean_is_idempotent(text in comment()) {
            let config = NormalizationConfig::default();
            let once = clean(&text, &config);
            prop_assert_eq!(clean(&once, &config), once.clone());
            prop_assert!(once.chars().all(|c| !config.invisible_charset().contains(&c)));
        }

        #[test]
        fn clean_is_idempotent_without_spacing(text in comment()) {
            let config = NormalizationConfig::with_emoticons(EmoticonDictionary::builtin(), false).unwrap();
            let once = clean(&text, &config);
            prop_assert_eq!(clean(&once, &config), once);
        }

        #[test]
        fn vietnamese_case_does_not_matter(text in "[a-zđ ]{0,20}") {
            let config = NormalizationConfig::default();
            prop_assert_eq!(clean(&text.to_uppercase(), &config), clean(&text, &config));
        }
    }
}
