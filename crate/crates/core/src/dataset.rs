//! Image manifests: CSV `path,label` with paths relative to the manifest's
//! directory and `label` 0 (real) or 1 (AI).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::LabeledImage;
use crate::error::{Error, Result};
use crate::imaging;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(with = "label01")]
    pub label: bool,
}

impl ManifestEntry {
    /// Image id: the file stem.
    pub fn id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

mod label01 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match String::deserialize(d)?.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(de::Error::custom(format!("label must be 0 or 1, got '{other}'"))),
        }
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Generation(e.to_string()))?;
    for e in entries {
        w.serialize(e).map_err(|e| Error::Generation(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            row: 1,
            message: format!("{other:?}"),
        },
    })?;
    let mut entries = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, rec) in rdr.deserialize::<ManifestEntry>().enumerate() {
        let e = rec.map_err(|err| Error::Parse {
            row: err.position().map_or(i + 2, |p| p.line() as usize),
            message: err.to_string(),
        })?;
        if !ids.insert(e.id()) {
            return Err(Error::Integrity(format!("duplicate image id '{}' in {}", e.id(), path.display())));
        }
        entries.push(e);
    }
    Ok(Manifest {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        entries,
    })
}

/// Build a manifest from `real/` and `ai/` subdirectories (PNG and JPEG
/// files, sorted by name).
pub fn scan_class_dirs(dir: &Path) -> Result<Manifest> {
    let mut entries = Vec::new();
    for (sub, label) in [("real", false), ("ai", true)] {
        let d = dir.join(sub);
        let mut files: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        files.sort();
        entries.extend(files.into_iter().map(|p| ManifestEntry {
            path: Path::new(sub).join(p.file_name().unwrap_or_default()),
            label,
        }));
    }
    Ok(Manifest {
        root: dir.to_path_buf(),
        entries,
    })
}

/// Resolve `--data`: a manifest file, a directory holding `<split>.csv`, a
/// directory holding `manifest.csv`, or a directory with `real/` and `ai/`.
pub fn open(data: &Path, split: Option<&str>) -> Result<Manifest> {
    if data.is_file() {
        return read_manifest(data);
    }
    if let Some(name) = split {
        let p = data.join(format!("{name}.csv"));
        if p.is_file() {
            return read_manifest(&p);
        }
    }
    let p = data.join("manifest.csv");
    if p.is_file() {
        return read_manifest(&p);
    }
    scan_class_dirs(data)
}

pub fn load_images(m: &Manifest) -> Result<Vec<LabeledImage>> {
    m.entries
        .iter()
        .map(|e| {
            let img = imaging::load_image(&m.root.join(&e.path))?;
            Ok(LabeledImage {
                id: e.id(),
                label: e.label,
                image: imaging::to_unit(&img),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            ManifestEntry { path: "real/a.png".into(), label: false },
            ManifestEntry { path: "ai/b.png".into(), label: true },
        ];
        let p = dir.path().join("m.csv");
        write_manifest(&entries, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "path,label\nreal/a.png,0\nai/b.png,1\n");
        let m = read_manifest(&p).unwrap();
        assert_eq!(m.entries, entries);
        assert_eq!(m.root, dir.path());
    }

    #[test]
    fn bad_label_and_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "path,label\na.png,0\nb.png,2\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Parse { row: 3, .. })));
        std::fs::write(&p, "path,label\nreal/a.png,0\nai/a.png,1\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Integrity(_))));
    }
}
