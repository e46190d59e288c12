//! Pair manifests: one CSV row per (negative, positive) pair.
//!
//! Paths in the CSV are relative to the directory holding the manifest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::load_wav;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    VocalPair,
    SongPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParam(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetTag {
    D1,
    D2,
    D3,
    D4,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetTag::D1 => "D1",
            DatasetTag::D2 => "D2",
            DatasetTag::D3 => "D3",
            DatasetTag::D4 => "D4",
            DatasetTag::Synth => "SYNTH",
        })
    }
}

impl FromStr for DatasetTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "D1" => Ok(DatasetTag::D1),
            "D2" => Ok(DatasetTag::D2),
            "D3" => Ok(DatasetTag::D3),
            "D4" => Ok(DatasetTag::D4),
            "SYNTH" => Ok(DatasetTag::Synth),
            other => Err(Error::InvalidParam(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub negative_path: PathBuf,
    pub positive_path: PathBuf,
    pub kind: PairKind,
    pub source_id: String,
    pub split: Split,
    pub dataset: DatasetTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset: DatasetTag,
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(dataset: DatasetTag, root: impl Into<PathBuf>) -> Self {
        Self {
            dataset,
            root: root.into(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.root.join(path)
    }

    pub fn negative(&self, entry: &ManifestEntry) -> PathBuf {
        self.resolve(&entry.negative_path)
    }

    pub fn positive(&self, entry: &ManifestEntry) -> PathBuf {
        self.resolve(&entry.positive_path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Copy holding only the entries of one split.
    pub fn subset(&self, split: Split) -> Self {
        Self {
            dataset: self.dataset,
            root: self.root.clone(),
            entries: self.split(split).cloned().collect(),
        }
    }

    pub fn source_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .map(|e| e.source_id.as_str())
            .filter(|s| seen.insert(*s))
            .collect()
    }

    /// Fails if any source id appears in more than one split.
    pub fn check_split_hygiene(&self) -> Result<()> {
        let mut by_source: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.entries {
            match by_source.insert(&e.source_id, e.split) {
                Some(prev) if prev != e.split => {
                    return Err(Error::Dataset(format!(
                        "source {:?} appears in both {prev} and {}",
                        e.source_id, e.split
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Structural checks: unique pair ids, one dataset tag, split hygiene.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(&e.pair_id) {
                return Err(Error::Dataset(format!("duplicate pair id {:?}", e.pair_id)));
            }
            if e.dataset != self.dataset {
                return Err(Error::Dataset(format!(
                    "entry {} is tagged {} in a {} manifest",
                    e.pair_id, e.dataset, self.dataset
                )));
            }
        }
        self.check_split_hygiene()
    }

    /// Every listed file exists and decodes.
    pub fn check_files(&self) -> Result<()> {
        for e in &self.entries {
            for p in [self.negative(e), self.positive(e)] {
                load_wav(&p).map_err(|err| Error::Dataset(format!("{}: {err}", p.display())))?;
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    /// Reads a manifest; entry paths stay relative to its directory.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let entries = csv::Reader::from_reader(file)
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        let dataset = entries
            .first()
            .map(|e| e.dataset)
            .ok_or_else(|| Error::Dataset(format!("{}: empty manifest", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { dataset, root, entries };
        m.validate()?;
        Ok(m)
    }
}
