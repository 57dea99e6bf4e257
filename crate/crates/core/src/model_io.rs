//! Model directories: `model.json` (architecture, metadata, content hash)
//! plus a `params.f32` payload in the raster codec format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tensornet::{Network, NetworkSpec};

use crate::raster::{read_payload, write_payload, Grid, Sidecar, DTYPE};
use crate::{Error, Result};

pub const DESCRIPTOR_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.f32";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Extractor,
    Unet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Descriptor {
    format: u32,
    kind: ModelKind,
    id: String,
    network: NetworkSpec,
    metadata: serde_json::Value,
    state_len: usize,
    sha256: String,
}

/// Serialized weights plus the architecture needed to rebuild the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub id: String,
    pub network: NetworkSpec,
    /// Free-form training configuration and log summary.
    pub metadata: serde_json::Value,
    /// Parameters followed by batch-norm running statistics.
    pub state: Vec<f32>,
}

fn digest(state: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in state {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl ModelParams {
    pub fn from_network(kind: ModelKind, id: impl Into<String>, net: &Network<f32>, metadata: serde_json::Value) -> Self {
        Self {
            kind,
            id: id.into(),
            network: net.spec().clone(),
            metadata,
            state: net.export_state(),
        }
    }

    pub fn to_network(&self) -> Result<Network<f32>> {
        let mut net = Network::new(self.network.clone())?;
        net.import_state(&self.state)
            .map_err(|e| Error::Model(format!("{}: {e}", self.id)))?;
        Ok(net)
    }

    pub fn sha256(&self) -> String {
        digest(&self.state)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let grid = Grid::new(1, self.state.len(), self.state.clone())
            .map_err(|_| Error::Model(format!("{} has no parameters", self.id)))?;
        let meta = Sidecar {
            height: 1,
            width: self.state.len(),
            product_id: self.id.clone(),
            provenance: vec![format!("model:{}", serde_json::to_string(&self.kind).unwrap_or_default())],
            dtype: DTYPE.into(),
            extractor_id: None,
        };
        write_payload(&dir.join(PARAMS_FILE), &grid, &meta)?;
        let desc = Descriptor {
            format: FORMAT_VERSION,
            kind: self.kind,
            id: self.id.clone(),
            network: self.network.clone(),
            metadata: self.metadata.clone(),
            state_len: self.state.len(),
            sha256: self.sha256(),
        };
        let path = dir.join(DESCRIPTOR_FILE);
        let json = serde_json::to_vec_pretty(&desc).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Load and verify the content hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DESCRIPTOR_FILE);
        let text = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Model(format!("no model at {}", dir.display())),
            _ => Error::io(&path, e),
        })?;
        let desc: Descriptor = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
        if desc.format != FORMAT_VERSION {
            return Err(Error::Format {
                path,
                reason: format!("model format {} (expected {FORMAT_VERSION})", desc.format),
            });
        }
        let params = dir.join(PARAMS_FILE);
        let (grid, _) = read_payload(&params)?;
        let state = grid.into_vec();
        if state.len() != desc.state_len || digest(&state) != desc.sha256 {
            return Err(Error::Corruption {
                path: params,
                reason: "parameter payload does not match the descriptor hash".into(),
            });
        }
        Ok(Self {
            kind: desc.kind,
            id: desc.id,
            network: desc.network,
            metadata: desc.metadata,
            state,
        })
    }

    pub fn expect_kind(self, kind: ModelKind) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::Model(format!("{} is a {:?} model, expected {kind:?}", self.id, self.kind)));
        }
        Ok(self)
    }
}
