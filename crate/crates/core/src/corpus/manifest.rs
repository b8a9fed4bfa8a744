//! Dataset manifests: one JSON object per line, paths relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotation::SceneAnnotation;
use crate::error::{io_at, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    ValidationQuery,
    Candidates,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation-query" | "query" => Ok(Split::ValidationQuery),
            "candidates" => Ok(Split::Candidates),
            other => Err(Error::arg(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub split: Split,
    pub image_path: PathBuf,
    pub embedding_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<SceneAnnotation>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    /// Directory that relative entry paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            entries,
        };
        m.check_ids()?;
        Ok(m)
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Schema(format!("duplicate image id {}", e.image_id)));
            }
            if let Some(a) = &e.annotation {
                a.validate()?;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Parse without touching referenced files.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| Error::Schema(format!("manifest line {}: {e}", n + 1)))?;
            entries.push(e);
        }
        Self::new(root, entries)
    }

    /// Load and check that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root)?;
        for e in &m.entries {
            let mut paths = vec![&e.image_path, &e.embedding_path];
            paths.extend(e.global_feature_path.as_ref());
            for p in paths {
                let full = m.resolve(p);
                if !full.exists() {
                    return Err(Error::Schema(format!(
                        "{}: referenced file {} does not exist",
                        e.image_id,
                        full.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_jsonl()?;
        fs::File::create(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(io_at(path))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
