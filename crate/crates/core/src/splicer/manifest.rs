use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SpliceRecord;
use crate::{Error, Result};

/// A pristine tile listed in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PristineEntry {
    pub tile_id: String,
    pub product_id: String,
    pub path: PathBuf,
}

/// One JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ManifestLine {
    Header {
        name: String,
        split: String,
        seed: u64,
        tile_side: usize,
    },
    Pristine(PristineEntry),
    Record(SpliceRecord),
}

/// In-memory form of a JSONL manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub split: String,
    pub seed: u64,
    pub tile_side: usize,
    pub pristine: Vec<PristineEntry>,
    pub records: Vec<SpliceRecord>,
    /// Directory relative paths resolve against; not serialized.
    pub base: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.base.join(rel)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &ManifestLine| {
            out.push_str(&serde_json::to_string(line).expect("manifest lines serialize"));
            out.push('\n');
        };
        push(&ManifestLine::Header {
            name: self.name.clone(),
            split: self.split.clone(),
            seed: self.seed,
            tile_side: self.tile_side,
        });
        for p in &self.pristine {
            push(&ManifestLine::Pristine(p.clone()));
        }
        for r in &self.records {
            push(&ManifestLine::Record(r.clone()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = None;
        let mut pristine = Vec::new();
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })?;
            match parsed {
                ManifestLine::Header { .. } if header.is_some() => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("second header on line {}", i + 1),
                    })
                }
                h @ ManifestLine::Header { .. } => header = Some(h),
                ManifestLine::Pristine(p) => pristine.push(p),
                ManifestLine::Record(r) => records.push(r),
            }
        }
        let Some(ManifestLine::Header {
            name,
            split,
            seed,
            tile_side,
        }) = header
        else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "missing header line".into(),
            });
        };
        Ok(Self {
            name,
            split,
            seed,
            tile_side,
            pristine,
            records,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }
}
