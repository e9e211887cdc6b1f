//! Tab-separated dataset manifests.
//!
//! One record per line: `image_id`, `image_path`, `mask_path`, `split`,
//! `true_style_id` (empty when absent). Paths are relative to the directory
//! holding the manifest unless absolute.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::image::{Image, SegMask};
use crate::error::{DhaError, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Source,
    Compound,
    Open,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Source => "source",
            Split::Compound => "compound",
            Split::Open => "open",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "source" => Ok(Split::Source),
            "compound" => Ok(Split::Compound),
            "open" => Ok(Split::Open),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: String,
    pub mask_path: String,
    pub split: Split,
    pub true_style_id: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { entries };
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(DhaError::Invalid(format!("duplicate image_id `{}`", e.image_id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Manifest {
        Manifest {
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
        }
    }

    /// The view handed to training stages: ground-truth style ids removed.
    pub fn without_styles(&self) -> Manifest {
        Manifest {
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    true_style_id: None,
                    ..e.clone()
                })
                .collect(),
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let style = e.true_style_id.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.image_id, e.image_path, e.mask_path, e.split, style
            ));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| DhaError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 5 {
                return Err(err(
                    line,
                    format!(
                        "expected 5 tab-separated fields (image_id, image_path, mask_path, split, true_style_id), got {}",
                        fields.len()
                    ),
                ));
            }
            for (name, value) in ["image_id", "image_path", "mask_path", "split"].iter().zip(&fields) {
                if value.is_empty() {
                    return Err(err(line, format!("empty {name}")));
                }
            }
            let split = fields[3].parse().map_err(|m| err(line, m))?;
            let true_style_id = match fields[4] {
                "" => None,
                s => Some(s.parse().map_err(|_| err(line, format!("bad true_style_id `{s}`")))?),
            };
            entries.push(ManifestEntry {
                image_id: fields[0].to_string(),
                image_path: fields[1].to_string(),
                mask_path: fields[2].to_string(),
                split,
                true_style_id,
            });
        }
        let m = Manifest { entries };
        m.check_unique_ids()?;
        Ok(m)
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    fs::write(path, manifest.to_text()).at(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).at(path)?;
    Manifest::parse(&text, path)
}

/// Resolves manifest-relative paths against the manifest's directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = read_manifest(manifest_path)?;
        Ok(Self {
            root: manifest_path.parent().map(Path::to_path_buf).unwrap_or_default(),
            manifest,
        })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<Image> {
        Image::load_png(&self.resolve(&entry.image_path))
    }

    pub fn load_mask(&self, entry: &ManifestEntry, num_classes: usize) -> Result<SegMask> {
        SegMask::load_png(&self.resolve(&entry.mask_path), num_classes)
    }

    pub fn check_paths(&self) -> Result<()> {
        for e in &self.manifest.entries {
            for rel in [&e.image_path, &e.mask_path] {
                let p = self.resolve(rel);
                if !p.is_file() {
                    return Err(DhaError::Missing(p));
                }
            }
        }
        Ok(())
    }
}
