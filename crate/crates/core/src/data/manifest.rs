use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One manifest line after path resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub dataset_id: String,
    /// File stem of the image, unique within its dataset.
    pub sample_id: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct dataset ids in order of first appearance.
    pub fn dataset_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.dataset_id.clone()))
            .map(|e| e.dataset_id.clone())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    image: String,
    mask: String,
    dataset: String,
}

/// Reads a JSON-lines manifest. Relative paths resolve against the manifest's
/// directory. Whitespace-only lines are skipped; line numbers in errors are
/// 1-based file lines.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |reason: String| Error::ManifestLine {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| line_err(e.to_string()))?;
        let image_path = base.join(&record.image);
        let mask_path = base.join(&record.mask);
        for p in [&image_path, &mask_path] {
            if !p.is_file() {
                return Err(line_err(format!("unresolvable path {}", p.display())));
            }
        }
        let sample_id = image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !ids.insert((record.dataset.clone(), sample_id.clone())) {
            return Err(line_err(format!(
                "duplicate sample id `{sample_id}` in dataset `{}`",
                record.dataset
            )));
        }
        entries.push(ManifestEntry {
            image_path,
            mask_path,
            dataset_id: record.dataset,
            sample_id,
        });
    }
    Ok(Manifest { entries })
}

/// Writes a manifest with paths relative to `dir` when possible.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for e in &manifest.entries {
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let rec = Record {
            image: rel(&e.image_path),
            mask: rel(&e.mask_path),
            dataset: e.dataset_id.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Serde(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"x").unwrap();
    }

    #[test]
    fn reads_entries_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.png", "a_m.png", "b.png", "b_m.png", "c.png", "c_m.png"] {
            touch(dir.path(), n);
        }
        let text = [
            r#"{"image": "a.png", "mask": "a_m.png", "dataset": "d1"}"#,
            r#"{"image": "b.png", "mask": "b_m.png", "dataset": "d1"}"#,
            r#"{"image": "c.png", "mask": "c_m.png", "dataset": "d2"}"#,
        ]
        .join("\n");
        let mpath = dir.path().join("m.jsonl");
        fs::write(&mpath, text).unwrap();
        let m = load_manifest(&mpath).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries[1].sample_id, "b");
        assert_eq!(m.dataset_ids(), vec!["d1", "d2"]);
    }

    #[test]
    fn empty_file_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("m.jsonl");
        fs::write(&mpath, "").unwrap();
        assert!(load_manifest(&mpath).unwrap().is_empty());
    }

    #[test]
    fn missing_mask_key_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        touch(dir.path(), "a_m.png");
        let text = [
            r#"{"image": "a.png", "mask": "a_m.png", "dataset": "d"}"#,
            r#"{"image": "a.png", "dataset": "d"}"#,
        ]
        .join("\n");
        let mpath = dir.path().join("m.jsonl");
        fs::write(&mpath, text).unwrap();
        match load_manifest(&mpath) {
            Err(Error::ManifestLine { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("mask"), "{reason}");
            }
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_and_unresolvable_path_are_errors() {
        assert!(matches!(load_manifest("/nonexistent/m.jsonl"), Err(Error::Io { .. })));
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("m.jsonl");
        fs::write(&mpath, r#"{"image": "nope.png", "mask": "nope.png", "dataset": "d"}"#).unwrap();
        assert!(matches!(load_manifest(&mpath), Err(Error::ManifestLine { line: 1, .. })));
    }

    #[test]
    fn duplicate_sample_ids_within_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        let line = r#"{"image": "a.png", "mask": "a.png", "dataset": "d"}"#;
        let mpath = dir.path().join("m.jsonl");
        fs::write(&mpath, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(load_manifest(&mpath), Err(Error::ManifestLine { line: 2, .. })));
    }
}
