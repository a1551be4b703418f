//! Unicode composition and Vietnamese tone-mark placement.
//!
//! Text is decomposed, each letter run is checked against the shape of a
//! Vietnamese syllable (onset consonants, a vowel nucleus of one to three
//! vowels, final consonants) and, when it carries exactly one tone mark, the
//! mark is moved onto the main vowel of the nucleus. Everything is then
//! recomposed (NFC). Runs that do not parse as a syllable are only composed.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

const GRAVE: char = '\u{0300}';
const ACUTE: char = '\u{0301}';
const TILDE: char = '\u{0303}';
const HOOK_ABOVE: char = '\u{0309}';
const DOT_BELOW: char = '\u{0323}';

const CIRCUMFLEX: char = '\u{0302}';
const BREVE: char = '\u{0306}';
const HORN: char = '\u{031B}';

fn is_tone(c: char) -> bool {
    matches!(c, GRAVE | ACUTE | TILDE | HOOK_ABOVE | DOT_BELOW)
}

fn is_quality(c: char) -> bool {
    matches!(c, CIRCUMFLEX | BREVE | HORN)
}

fn is_vowel(c: char) -> bool {
    matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

fn is_vietnamese_letter(c: char) -> bool {
    c.is_ascii_alphabetic() || c == 'đ' || c == 'Đ'
}

/// Base letter with the combining marks that follow it.
#[derive(Debug)]
struct Glyph {
    base: char,
    marks: Vec<char>,
}

/// Composes `text` canonically and reattaches misplaced Vietnamese tone
/// marks to the main vowel of their syllable.
pub fn normalize_encoding(text: &str) -> String {
    let decomposed: Vec<char> = text.nfd().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < decomposed.len() {
        let c = decomposed[i];
        if c.is_alphabetic() {
            let start = i;
            i += 1;
            while i < decomposed.len() && (decomposed[i].is_alphabetic() || is_combining_mark(decomposed[i])) {
                i += 1;
            }
            let run = &decomposed[start..i];
            match place_tone(run) {
                Some(fixed) => out.extend(fixed.iter().copied().nfc()),
                None => out.extend(run.iter().copied().nfc()),
            }
        } else {
            let start = i;
            i += 1;
            while i < decomposed.len() && !decomposed[i].is_alphabetic() {
                i += 1;
            }
            out.extend(decomposed[start..i].iter().copied().nfc());
        }
    }
    // Recompose across run boundaries (e.g. a mark following a digit).
    out.nfc().collect()
}

fn split_glyphs(run: &[char]) -> Option<Vec<Glyph>> {
    let mut glyphs: Vec<Glyph> = Vec::new();
    for &c in run {
        if is_combining_mark(c) {
            glyphs.last_mut()?.marks.push(c);
        } else {
            glyphs.push(Glyph {
                base: c,
                marks: Vec::new(),
            });
        }
    }
    Some(glyphs)
}

/// Returns the decomposed run with its tone mark moved, or `None` when the
/// run is not a single Vietnamese syllable carrying exactly one tone mark.
fn place_tone(run: &[char]) -> Option<Vec<char>> {
    let mut glyphs = split_glyphs(run)?;
    if !glyphs.iter().all(|g| is_vietnamese_letter(g.base)) {
        return None;
    }
    let mut tone = None;
    for g in &glyphs {
        for &m in &g.marks {
            if is_tone(m) {
                if tone.is_some() {
                    return None;
                }
                tone = Some(m);
            } else if !is_quality(m) {
                return None;
            }
        }
    }
    let tone = tone?;
    let lower: Vec<char> = glyphs.iter().map(|g| g.base.to_ascii_lowercase()).collect();

    let mut onset = lower.iter().take_while(|c| !is_vowel(**c)).count();
    if onset > 0 && onset < lower.len() {
        let prev = lower[onset - 1];
        let next_is_vowel = lower.get(onset + 1).is_some_and(|c| is_vowel(*c));
        if (prev == 'q' && lower[onset] == 'u') || (prev == 'g' && lower[onset] == 'i' && next_is_vowel) {
            onset += 1;
        }
    }
    let nucleus_len = lower[onset..].iter().take_while(|c| is_vowel(**c)).count();
    if nucleus_len == 0 || nucleus_len > 3 {
        return None;
    }
    let coda = &lower[onset + nucleus_len..];
    if coda.iter().any(|c| is_vowel(*c)) {
        return None;
    }
    let nucleus = onset..onset + nucleus_len;

    let target = if let Some(pos) = nucleus
        .clone()
        .rev()
        .find(|&k| glyphs[k].marks.iter().any(|m| is_quality(*m)))
    {
        pos
    } else if !coda.is_empty() {
        nucleus.end - 1
    } else {
        match nucleus_len {
            1 | 2 => nucleus.start,
            _ => nucleus.start + 1,
        }
    };

    for g in glyphs.iter_mut() {
        g.marks.retain(|m| !is_tone(*m));
    }
    glyphs[target].marks.push(tone);
    Some(
        glyphs
            .into_iter()
            .flat_map(|g| std::iter::once(g.base).chain(g.marks))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misplaced_tone_moves_to_marked_vowel() {
        assert_eq!(normalize_encoding("thíêt kê\u{0301}"), "thiết kế");
    }

    #[test]
    fn empty_is_empty() {
        assert_eq!(normalize_encoding(""), "");
    }

    #[test]
    fn decomposed_acute_composes() {
        let out = normalize_encoding("e\u{0301}");
        assert_eq!(out, "\u{00E9}");
        assert_eq!(out.chars().count(), 1);
    }

    #[test]
    fn placement_rules() {
        // open two-vowel nucleus: first vowel
        assert_eq!(normalize_encoding("hoa\u{0300}"), "hòa");
        assert_eq!(normalize_encoding("mua\u{0300}"), "mùa");
        // closed syllable: last vowel
        assert_eq!(normalize_encoding("to\u{0301}an"), "toán");
        // quality-marked vowel wins, horn pair takes the second
        assert_eq!(normalize_encoding("ngu\u{031B}\u{0300}o\u{031B}i"), "người");
        // qu / gi onsets
        assert_eq!(normalize_encoding("qu\u{0301}y"), "quý");
        assert_eq!(normalize_encoding("gi\u{0300}a"), "già");
        assert_eq!(normalize_encoding("gi\u{0300}"), "gì");
        // three-vowel nucleus: middle
        assert_eq!(normalize_encoding("xo\u{0301}ay"), "xoáy");
    }

    #[test]
    fn case_is_preserved() {
        assert_eq!(normalize_encoding("THÍÊT"), "THIẾT");
        assert_eq!(normalize_encoding("Đe\u{0323}p"), "Đẹp");
    }

    #[test]
    fn non_syllables_only_compose() {
        assert_eq!(normalize_encoding("idéa"), "idéa");
        assert_eq!(normalize_encoding("naïve"), "naïve");
        assert_eq!(normalize_encoding("1\u{0301}"), "1\u{0301}");
    }
}
