//! Dataset manifests: one `path<TAB>class_id` record per line, paths
//! resolved relative to the manifest's directory.

use super::DataError;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_id: u32,
}

/// Ordered list of dataset files with their shape categories. An empty
/// manifest is valid (usable only for inference).
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

pub fn load_manifest(path: &Path, split: Split) -> Result<DatasetManifest, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = raw.trim_end_matches(['\r', '\n']);
        if body.trim().is_empty() || body.trim_start().starts_with('#') {
            continue;
        }
        let (rel, class) = body
            .split_once('\t')
            .ok_or_else(|| parse_err(line_no, "expected path<TAB>class_id".into()))?;
        let class_id: u32 = class
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("class_id {:?} is not an integer", class.trim())))?;
        let resolved = if Path::new(rel).is_absolute() {
            PathBuf::from(rel)
        } else {
            base.join(rel)
        };
        if !seen.insert(resolved.clone()) {
            return Err(parse_err(line_no, format!("duplicate path {rel:?}")));
        }
        entries.push(ManifestEntry {
            path: resolved,
            class_id,
        });
    }
    Ok(DatasetManifest { entries, split })
}
