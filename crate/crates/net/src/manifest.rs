//! Dataset manifest: one JSON object per line describing a prepared shape.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xgen_core::tsdf::DenseSdfGrid;

use crate::data::{ShapeSamples, TrainingShape};
use crate::error::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// File paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Name of the source mesh the entry was derived from.
    pub source: String,
    /// Rotation-augmentation copy index (0 is the unrotated shape).
    pub augmentation: u32,
    pub split: Split,
    pub mesh: String,
    pub tsdf: String,
    pub samples: String,
    pub field: String,
    pub config_hash: String,
}

impl ManifestEntry {
    pub fn resolve(&self, base: &Path, file: &str) -> PathBuf {
        base.join(file)
    }

    /// Loads the TSDF and samples the trainer needs.
    pub fn load(&self, base: &Path) -> Result<TrainingShape> {
        for f in [&self.tsdf, &self.samples] {
            let p = self.resolve(base, f);
            if !p.is_file() {
                return Err(NetError::Manifest {
                    line: 0,
                    msg: format!("entry {} is missing {}", self.id, p.display()),
                });
            }
        }
        Ok(TrainingShape {
            id: self.id.clone(),
            samples: ShapeSamples::read(self.resolve(base, &self.samples))?,
            tsdf: DenseSdfGrid::read(self.resolve(base, &self.tsdf))?,
        })
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(&line).map_err(|e| NetError::Manifest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn manifest_text(entries: &[ManifestEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let text = manifest_text(entries)?;
    Ok(xgen_core::write_atomic(path, |w| w.write_all(text.as_bytes()))?)
}

/// Loads every entry of one split, reporting the manifest line of failures.
pub fn load_split(path: impl AsRef<Path>, split: Split) -> Result<Vec<TrainingShape>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(path)?;
    let mut shapes = Vec::new();
    for (line, e) in entries.iter().enumerate() {
        if e.split != split {
            continue;
        }
        let shape = e.load(base).map_err(|err| match err {
            NetError::Manifest { msg, .. } => NetError::Manifest { line: line + 1, msg },
            other => NetError::Manifest {
                line: line + 1,
                msg: format!("entry {}: {other}", e.id),
            },
        })?;
        shapes.push(shape);
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            source: "sphere".into(),
            augmentation: 0,
            split: Split::Train,
            mesh: format!("{id}.obj"),
            tsdf: format!("{id}.tsdf"),
            samples: format!("{id}.xsmp"),
            field: format!("{id}.xfld"),
            config_hash: "h".into(),
        }
    }

    #[test]
    fn round_trip_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&path, &[entry("a"), entry("b")]).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, vec![entry("a"), entry("b")]);
        let err = load_split(&path, Split::Train).unwrap_err();
        assert!(matches!(err, NetError::Manifest { line: 1, .. }), "{err}");
        assert!(load_split(&path, Split::Test).unwrap().is_empty());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut line = serde_json::to_value(entry("a")).unwrap();
        line["extra"] = 1.into();
        std::fs::write(&path, format!("{line}\n")).unwrap();
        assert!(matches!(read_manifest(&path), Err(NetError::Manifest { line: 1, .. })));
    }
}
