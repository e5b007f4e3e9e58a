use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CategorySet, Dataset, DatasetKind, Example};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsgroupOptions {
    /// Drop the message header (every line before the first blank line).
    pub strip_headers: bool,
}

impl Default for NewsgroupOptions {
    fn default() -> Self {
        Self {
            strip_headers: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub files_read: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Loads a `<root>/<category>/<document>` tree. Category names are the sorted
/// subdirectory names; documents within a category are read in name order.
/// Unreadable documents are skipped and listed in the report.
pub fn load_20newsgroup(
    root: impl AsRef<Path>,
    options: &NewsgroupOptions,
) -> Result<(Dataset, LoadReport)> {
    let root = root.as_ref();
    let dirs = category_dirs(root)?;
    let categories = CategorySet::new(dirs.iter().map(|(name, _)| name.clone()))?;
    let mut report = LoadReport::default();
    let mut examples = Vec::new();
    for (label, (name, dir)) in dirs.iter().enumerate() {
        read_category(dir, name, label, options, &mut examples, &mut report)?;
    }
    Ok((
        Dataset::new(categories, examples, DatasetKind::Labeled)?,
        report,
    ))
}

/// Loads several trees sharing one category set (e.g. the by-date train and
/// test halves) into a single dataset. Ids are prefixed with the root's
/// directory name.
pub fn load_20newsgroup_roots(
    roots: &[PathBuf],
    options: &NewsgroupOptions,
) -> Result<(Dataset, LoadReport)> {
    let mut categories: Option<CategorySet> = None;
    let mut examples = Vec::new();
    let mut report = LoadReport::default();
    for root in roots {
        let (ds, r) = load_20newsgroup(root, options)?;
        match &categories {
            None => categories = Some(ds.categories().clone()),
            Some(c) if c != ds.categories() => {
                return Err(Error::InvalidCategories(format!(
                    "{} has a different category set",
                    root.display()
                )))
            }
            Some(_) => {}
        }
        let prefix = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        for mut ex in ds.examples {
            if roots.len() > 1 {
                ex.id = format!("{prefix}/{}", ex.id);
            }
            examples.push(ex);
        }
        report.files_read += r.files_read;
        report.skipped.extend(r.skipped);
    }
    let categories = categories.ok_or_else(|| Error::InvalidConfig("no newsgroup roots".into()))?;
    Ok((
        Dataset::new(categories, examples, DatasetKind::Labeled)?,
        report,
    ))
}

/// Expands a distribution directory holding `20news-bydate-train` and
/// `20news-bydate-test` into both halves; any other path is returned as is.
pub fn resolve_newsgroup_roots(path: impl AsRef<Path>) -> Vec<PathBuf> {
    let path = path.as_ref();
    let train = path.join("20news-bydate-train");
    let test = path.join("20news-bydate-test");
    if train.is_dir() && test.is_dir() {
        vec![train, test]
    } else {
        vec![path.to_owned()]
    }
}

fn category_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "newsgroup root not found"),
        ));
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            dirs.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    dirs.sort();
    if dirs.len() < 2 {
        return Err(Error::InvalidCategories(format!(
            "{} has {} category directories; need at least 2",
            root.display(),
            dirs.len()
        )));
    }
    Ok(dirs)
}

fn read_category(
    dir: &Path,
    name: &str,
    label: usize,
    options: &NewsgroupOptions,
    examples: &mut Vec<Example>,
    report: &mut LoadReport,
) -> Result<()> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    for path in files {
        match fs::read(&path) {
            Ok(bytes) => {
                let raw = decode(bytes);
                let text = if options.strip_headers {
                    strip_header(&raw).to_owned()
                } else {
                    raw
                };
                let file = path.file_name().unwrap_or_default().to_string_lossy();
                examples.push(Example::labeled(format!("{name}/{file}"), text, label));
                report.files_read += 1;
            }
            Err(e) => {
                log::warn!("skipping unreadable document {}: {e}", path.display());
                report.skipped.push((path, e.to_string()));
            }
        }
    }
    Ok(())
}

// The distribution is mostly latin-1; fall back to it when bytes are not UTF-8.
fn decode(bytes: Vec<u8>) -> String {
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().into_iter().map(char::from).collect(),
    }
}

fn strip_header(doc: &str) -> &str {
    let mut offset = 0;
    for line in doc.split_inclusive('\n') {
        offset += line.len();
        if line.trim_end_matches(['\n', '\r']).is_empty() {
            return &doc[offset..];
        }
    }
    ""
}
