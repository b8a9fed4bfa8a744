//! Scene annotations, stored as JSON lines (one scene per line).

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_at, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Shape,
    Size,
    Material,
    Colour,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Shape,
        Attribute::Size,
        Attribute::Material,
        Attribute::Colour,
    ];

    /// Single-letter code: S, D (dimension), M, C.
    pub fn code(self) -> char {
        match self {
            Attribute::Shape => 'S',
            Attribute::Size => 'D',
            Attribute::Material => 'M',
            Attribute::Colour => 'C',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.code() == c.to_ascii_uppercase())
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Attribute::Shape => "shape",
            Attribute::Size => "size",
            Attribute::Material => "material",
            Attribute::Colour => "colour",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: String,
    pub size: String,
    pub material: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colour: Option<String>,
}

impl SceneObject {
    pub fn get(&self, attr: Attribute) -> Option<&str> {
        match attr {
            Attribute::Shape => Some(&self.shape),
            Attribute::Size => Some(&self.size),
            Attribute::Material => Some(&self.material),
            Attribute::Colour => self.colour.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub image_id: String,
    pub objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_object_index: Option<usize>,
}

impl SceneAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Schema(format!("scene {} has no objects", self.image_id)));
        }
        if let Some(i) = self.reference_object_index {
            if i >= self.objects.len() {
                return Err(Error::Schema(format!(
                    "scene {}: reference object {i} out of range ({} objects)",
                    self.image_id,
                    self.objects.len()
                )));
            }
        }
        Ok(())
    }

    pub fn reference_object(&self) -> Option<&SceneObject> {
        self.reference_object_index.map(|i| &self.objects[i])
    }

    /// Whether every object carries a value for `attr`.
    pub fn has_attribute(&self, attr: Attribute) -> bool {
        self.objects.iter().all(|o| o.get(attr).is_some())
    }
}

pub fn read_annotations(path: &Path) -> Result<Vec<SceneAnnotation>> {
    let file = fs::File::open(path).map_err(io_at(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: SceneAnnotation = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), n + 1)))?;
        scene.validate()?;
        out.push(scene);
    }
    Ok(out)
}

pub fn write_annotations(scenes: &[SceneAnnotation], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for s in scenes {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io_at(path))
}
