use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ClassLabel, LabeledComment};

const HEADER: &str = "id\tlabel\ttext";

/// Escapes tab, newline, carriage return and backslash for one TSV field.
pub fn escape_field(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(text: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// Parses `id<TAB>label<TAB>text` rows. A leading header row is skipped,
/// blank lines are ignored and ids must be unique.
pub fn parse_dataset(source: &str, path: &Path) -> Result<Vec<LabeledComment>> {
    let mut rows = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() || (i == 0 && line == HEADER) {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (id, label, text) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(label), Some(text)) => (id, label, text),
            _ => return Err(Error::parse(path, line_no, "expected `id<TAB>label<TAB>text`")),
        };
        if text.contains('\t') {
            return Err(Error::parse(path, line_no, "unescaped tab in text"));
        }
        let id = unescape_field(id).map_err(|m| Error::parse(path, line_no, m))?;
        if id.is_empty() {
            return Err(Error::parse(path, line_no, "empty id"));
        }
        let label: ClassLabel = label
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("unknown label `{label}`")))?;
        let text = unescape_field(text).map_err(|m| Error::parse(path, line_no, m))?;
        if !ids.insert(id.clone()) {
            return Err(Error::parse(path, line_no, format!("duplicate id `{id}`")));
        }
        rows.push(LabeledComment { id, text, label });
    }
    Ok(rows)
}

pub fn load_dataset(path: &Path) -> Result<Vec<LabeledComment>> {
    let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&source, path)
}

pub fn dataset_to_text(rows: &[LabeledComment]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&escape_field(&r.id));
        out.push('\t');
        out.push_str(r.label.name());
        out.push('\t');
        out.push_str(&escape_field(&r.text));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, rows: &[LabeledComment]) -> Result<()> {
    fs::write(path, dataset_to_text(rows)).map_err(|e| Error::io(path, e))
}

/// Reads one label per non-empty line from the first tab-separated column,
/// which accepts both plain label files and `predict` output.
pub fn parse_labels(source: &str, path: &Path) -> Result<Vec<ClassLabel>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let field = line.split('\t').next().unwrap_or_default();
        if i == 0 && field == "label" {
            continue;
        }
        let label = field
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("unknown label `{field}`")))?;
        out.push(label);
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<ClassLabel>> {
    let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&source, path)
}
