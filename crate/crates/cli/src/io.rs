use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use vihsd_core::eval::{load_dataset, load_labels};
use vihsd_core::{ClassLabel, LabeledComment};

const DATASET_HEADER: &str = "id\tlabel\ttext";

fn is_stdin(path: Option<&Path>) -> bool {
    path.is_none_or(|p| p.as_os_str() == "-")
}

pub fn read_to_string(path: Option<&Path>) -> Result<String> {
    if is_stdin(path) {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading standard input")?;
        Ok(s)
    } else {
        let path = path.expect("checked");
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

/// Non-empty lines of a file or standard input.
pub fn read_lines(path: Option<&Path>) -> Result<Vec<String>> {
    Ok(read_to_string(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

fn looks_like_dataset(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().next().map(|l| l.trim_end_matches('\r')) == Some(DATASET_HEADER))
}

/// Texts of a labelled dataset (recognized by its header) or of a plain
/// line-per-comment file.
pub fn read_texts(path: &Path) -> Result<Vec<String>> {
    if looks_like_dataset(path)? {
        Ok(load_dataset(path)?.into_iter().map(|r| r.text).collect())
    } else {
        Ok(read_lines(Some(path))?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect())
    }
}

/// One comment per input line, or the text column of a labelled dataset.
pub fn read_comments(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) if p.as_os_str() != "-" && looks_like_dataset(p)? => {
            Ok(load_dataset(p)?.into_iter().map(|r| r.text).collect())
        }
        _ => read_lines(path),
    }
}

/// Gold labels from a labelled dataset or a label file.
pub fn read_gold(path: &Path) -> Result<Vec<ClassLabel>> {
    if looks_like_dataset(path)? {
        Ok(load_dataset(path)?.into_iter().map(|r| r.label).collect())
    } else {
        Ok(load_labels(path)?)
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledComment>> {
    Ok(load_dataset(path)?)
}

/// Buffered writer to a file or standard output.
pub fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            ensure_parent(p)?;
            let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        _ => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

/// Absolute form of `path`, so that files referring to it stay valid
/// wherever they are moved.
pub fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}
