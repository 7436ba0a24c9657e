//! JSON-Lines dataset manifests.
//!
//! The first line holds `{"metadata": {...}}`; every following line is one
//! blur/sharp pair. Paths are stored relative to the manifest's directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::load_image;
use crate::synth::{MotionSpec, RegionMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub blur_path: String,
    pub sharp_path: String,
    pub ground_truth_kernel_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub id: usize,
    pub path: String,
    pub motion: MotionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub seed: u64,
    pub kernel_size: usize,
    pub kernels: Vec<KernelRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub metadata: ManifestMetadata,
    pub entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Meta { metadata: ManifestMetadata },
    Entry(ManifestEntry),
}

impl DatasetManifest {
    pub fn new(metadata: ManifestMetadata, entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        DatasetManifest { metadata, entries, base_dir: base_dir.into() }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Serialized JSON-Lines text.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&Line::Meta { metadata: self.metadata.clone() })?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut metadata = None;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(line).map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))? {
                Line::Meta { metadata: m } => {
                    if metadata.replace(m).is_some() {
                        return Err(Error::Format("manifest has more than one metadata line".into()));
                    }
                }
                Line::Entry(e) => entries.push(e),
            }
        }
        let metadata = metadata.ok_or_else(|| Error::Format("manifest has no metadata line".into()))?;
        Ok(DatasetManifest { metadata, entries, base_dir: base_dir.into() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest and checks every entry (see [`DatasetManifest::validate`]).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, base)?;
        m.validate()?;
        Ok(m)
    }

    /// Every path resolves and every blur/sharp pair shares its dimensions.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.entries.len() {
            self.load_pair(i)?;
            let e = &self.entries[i];
            if let Some(mask) = &e.region_mask_path {
                let p = self.resolve(mask);
                if !p.exists() {
                    return Err(Error::io(p, std::io::ErrorKind::NotFound.into()));
                }
            }
        }
        for k in &self.metadata.kernels {
            let p = self.resolve(&k.path);
            if !p.exists() {
                return Err(Error::io(p, std::io::ErrorKind::NotFound.into()));
            }
        }
        Ok(())
    }

    /// Loads entry `i` as `(blur, sharp)`.
    pub fn load_pair(&self, i: usize) -> Result<(Image, Image)> {
        let e = &self.entries[i];
        let blur = load_image(&self.resolve(&e.blur_path))?;
        let sharp = load_image(&self.resolve(&e.sharp_path))?;
        blur.ensure_same_shape(&sharp, &format!("manifest entry {i} blur/sharp"))?;
        Ok((blur, sharp))
    }

    pub fn load_mask(&self, i: usize) -> Result<Option<RegionMask>> {
        match &self.entries[i].region_mask_path {
            Some(p) => RegionMask::load(&self.resolve(p)).map(Some),
            None => Ok(None),
        }
    }

    /// Stable identifier for entry `i`.
    pub fn pair_id(&self, i: usize) -> String {
        format!("{i:05}")
    }

    pub fn kernel_paths(&self) -> Vec<PathBuf> {
        self.metadata.kernels.iter().map(|k| self.resolve(&k.path)).collect()
    }
}
