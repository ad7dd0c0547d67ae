//! JSON-lines dataset manifest: a metadata line followed by one record per
//! sample. Paths are stored relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::Origin;
use crate::codec::read_pnm;
use crate::error::{Error, Result};
use crate::label::{FusedLabel, LabelMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestMeta {
    /// Tile edge length, or `None` for untiled source images.
    pub block_size: Option<usize>,
    pub seed: u64,
    pub created_by_version: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    pub label: String,
    #[serde(default)]
    pub fused: Option<String>,
    pub split: Split,
    pub origin: Origin,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: ManifestMeta,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub meta: ManifestMeta,
    pub records: Vec<SampleRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl DatasetManifest {
    pub fn new(block_size: Option<usize>, seed: u64) -> Self {
        Self {
            meta: ManifestMeta {
                block_size,
                seed,
                created_by_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            records: Vec::new(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&MetaLine { meta: self.meta.clone() }).expect("serializable");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Codec("manifest is empty".into()))?;
        let meta: MetaLine =
            serde_json::from_str(first).map_err(|e| Error::Codec(format!("manifest metadata line: {e}")))?;
        let records = lines
            .map(|(n, l)| {
                serde_json::from_str(l).map_err(|e| Error::Codec(format!("manifest line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<SampleRecord>>>()?;
        let m = Self {
            meta: meta.meta,
            records,
        };
        m.check_ids()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text).map_err(|e| e.context(format!("manifest {}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check_ids()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Config(format!("duplicate manifest id {:?}", r.id)));
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split, origin: Option<Origin>) -> usize {
        self.records
            .iter()
            .filter(|r| r.split == split && origin.is_none_or(|o| r.origin == o))
            .count()
    }

    /// Checks ids, split eligibility, file presence and label value sets.
    pub fn audit(&self, root: &Path) -> Result<()> {
        self.check_ids()?;
        for r in &self.records {
            let ctx = |e: Error| e.context(format!("sample {}", r.id));
            if r.split == Split::Test && r.origin != Origin::Real {
                return Err(ctx(Error::Split("synthetic sample in the test split".into())));
            }
            let image = read_pnm(&resolve(root, &r.image)).map_err(ctx)?;
            let mask = LabelMask::new(read_pnm(&resolve(root, &r.label)).map_err(ctx)?).map_err(ctx)?;
            if (image.width(), image.height()) != (mask.width(), mask.height()) {
                return Err(ctx(Error::Shape("image and mask extents differ".into())));
            }
            if let Some(f) = &r.fused {
                let fused = FusedLabel::new(read_pnm(&resolve(root, f)).map_err(ctx)?).map_err(ctx)?;
                if (fused.width(), fused.height()) != (mask.width(), mask.height()) {
                    return Err(ctx(Error::Shape("fused label extents differ from the mask".into())));
                }
            }
        }
        Ok(())
    }
}

/// Absolute location of a manifest-relative path.
pub fn resolve(root: &Path, relative: &str) -> PathBuf {
    root.join(relative)
}

/// Manifest-relative form of `path` (with `/` separators).
pub fn relative(root: &Path, path: &Path) -> Result<String> {
    let rel = path
        .strip_prefix(root)
        .map_err(|_| Error::Config(format!("{} is outside {}", path.display(), root.display())))?;
    Ok(rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/"))
}

/// Directory holding `manifest_path`.
pub fn root_of(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."))
}
