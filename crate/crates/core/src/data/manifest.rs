//! Dataset manifests: UTF-8 CSV lines `raw_path,ref_path,split`, where
//! `ref_path` may be empty (or left out) for unpaired images. Blank lines,
//! `#` comments and a literal `raw_path,ref_path,split` header are skipped.
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePairRecord {
    pub raw_path: PathBuf,
    pub reference_path: Option<PathBuf>,
    pub split: String,
    /// 1-based line in the manifest file.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub name: String,
    pub records: Vec<ImagePairRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, tag: &str) -> impl Iterator<Item = &ImagePairRecord> {
        let tag = tag.to_string();
        self.records.iter().filter(move |r| r.split == tag)
    }

    pub fn paired(&self) -> impl Iterator<Item = &ImagePairRecord> {
        self.records.iter().filter(|r| r.reference_path.is_some())
    }
}

/// Parses and validates a manifest: file existence and duplicate raw paths.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let manifest = parse_manifest(&text, path, base)?;
    for r in &manifest.records {
        for p in std::iter::once(&r.raw_path).chain(r.reference_path.as_ref()) {
            if !p.is_file() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: r.line,
                    msg: format!("missing file {}", p.display()),
                });
            }
        }
    }
    Ok(manifest)
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, path: &Path, base: &Path) -> Result<Manifest> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    let mut seen: HashMap<PathBuf, usize> = HashMap::new();
    for (i, text_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = text_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let (raw, reference, split) = match row[..] {
            [raw, reference, split] => (raw, reference, split),
            [raw, split] => (raw, "", split),
            _ => return Err(err(line, format!("expected 2 or 3 fields, found {}", row.len()))),
        };
        if records.is_empty() && raw == "raw_path" {
            continue;
        }
        if raw.is_empty() {
            return Err(err(line, "empty raw_path".into()));
        }
        let raw_path = base.join(raw);
        if let Some(first) = seen.insert(raw_path.clone(), line) {
            return Err(err(
                line,
                format!("duplicate raw path {} (also on line {})", raw, first),
            ));
        }
        records.push(ImagePairRecord {
            raw_path,
            reference_path: (!reference.is_empty()).then(|| base.join(reference)),
            split: split.to_string(),
            line,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Manifest { name, records })
}
