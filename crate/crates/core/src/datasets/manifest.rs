use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "UFO120")]
    Ufo120,
    #[serde(rename = "UWNET")]
    UwNet,
    #[serde(rename = "UWSCENES")]
    UwScenes,
    #[serde(rename = "UIEB")]
    Uieb,
    #[serde(rename = "SYNTHETIC")]
    Synthetic,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Ufo120,
        DatasetKind::UwNet,
        DatasetKind::UwScenes,
        DatasetKind::Uieb,
        DatasetKind::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Ufo120 => "UFO120",
            DatasetKind::UwNet => "UWNET",
            DatasetKind::UwScenes => "UWSCENES",
            DatasetKind::Uieb => "UIEB",
            DatasetKind::Synthetic => "SYNTHETIC",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Manifest(format!("unknown dataset kind '{s}' (expected one of UFO120, UWNET, UWSCENES, UIEB, SYNTHETIC)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub underwater_path: PathBuf,
    pub clean_path: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    dataset_kind: DatasetKind,
}

/// Paired underwater/clean records, ordered by id.
///
/// On disk a manifest is JSON lines: a header line `{"dataset_kind": ...}`
/// followed by one `{"id", "underwater_path", "clean_path"}` object per line.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    kind: DatasetKind,
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(kind: DatasetKind, mut records: Vec<ManifestRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Manifest("no records".into()));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id '{}'", r.id)));
            }
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { kind, records })
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Restricts the manifest to the given ids; unknown ids are an error.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<DatasetManifest> {
        let records = ids
            .into_iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::Manifest(format!("id '{id}' not in manifest")))
            })
            .collect::<Result<Vec<_>>>()?;
        DatasetManifest::new(self.kind, records)
    }

    /// Decodes every referenced file.
    pub fn validate_files(&self) -> Result<()> {
        for r in &self.records {
            Image::load(&r.underwater_path)?;
            Image::load(&r.clean_path)?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header = serde_json::to_string(&ManifestHeader { dataset_kind: self.kind }).expect("serializable");
        writeln!(out, "{header}").expect("in-memory write");
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r).expect("serializable")).expect("in-memory write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let bad = |line: usize, e: serde_json::Error| Error::Manifest(format!("{}:{}: {e}", path.display(), line + 1));
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Manifest(format!("{}: empty manifest file", path.display())))?;
        let header: ManifestHeader = serde_json::from_str(&first.map_err(|e| Error::io(path, e))?).map_err(|e| bad(0, e))?;
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| bad(i, e))?);
        }
        DatasetManifest::new(header.dataset_kind, records)
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Manifest(format!("missing directory {}", dir.display())));
    }
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !path.is_file() || !is_image {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Manifest(format!("non UTF-8 file name {}", path.display())))?
            .to_string();
        if let Some(prev) = files.insert(id.clone(), path.clone()) {
            return Err(Error::Manifest(format!(
                "id '{id}' is ambiguous: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(files)
}

/// Scans `root/underwater` and `root/clean` and pairs files by stem.
///
/// Every file must have a partner and decode as a colour image.
pub fn build_manifest(root: &Path, kind: DatasetKind) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Manifest(format!("missing directory {}", root.display())));
    }
    let underwater = list_images(&root.join("underwater"))?;
    let clean = list_images(&root.join("clean"))?;
    if let Some(id) = underwater.keys().find(|id| !clean.contains_key(*id)) {
        return Err(Error::Manifest(format!("id '{id}' has no clean image")));
    }
    if let Some(id) = clean.keys().find(|id| !underwater.contains_key(*id)) {
        return Err(Error::Manifest(format!("id '{id}' has no underwater image")));
    }
    let records: Vec<_> = underwater
        .into_iter()
        .map(|(id, underwater_path)| {
            let clean_path = clean[&id].clone();
            ManifestRecord {
                id,
                underwater_path,
                clean_path,
            }
        })
        .collect();
    let manifest = DatasetManifest::new(kind, records)?;
    manifest.validate_files()?;
    Ok(manifest)
}
