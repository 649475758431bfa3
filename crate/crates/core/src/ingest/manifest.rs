//! Dataset manifest: a JSON document listing cube files, their optional
//! label rasters and a split per region. Relative paths resolve against the
//! manifest's directory.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "regions": [
//!     { "region_id": "r0", "cube": "r0.pimc", "labels": "r0.labels.pimc", "split": "train" }
//!   ]
//! }
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::decode_header;
use crate::error::{read_file, read_json, write_json, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub region_id: String,
    pub cube: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub regions: Vec<RegionEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, regions: Vec<RegionEntry>) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            regions,
            root: root.into(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &RegionEntry> {
        self.regions.iter().filter(move |r| r.split == split)
    }

    /// Check the version, region-id uniqueness (which keeps splits disjoint),
    /// and that every referenced file exists with a valid header.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest format_version {} unsupported (expected {MANIFEST_VERSION})",
                self.format_version
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &self.regions {
            if !seen.insert(r.region_id.as_str()) {
                return Err(Error::Validation(format!(
                    "region {:?} listed more than once; splits must be disjoint",
                    r.region_id
                )));
            }
            for f in std::iter::once(&r.cube).chain(r.labels.as_ref()) {
                let path = self.resolve(f);
                let bytes = read_file(&path)?;
                decode_header(&bytes).map_err(|e| super::container::with_path(e, &path))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: DatasetManifest = read_json(path)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
