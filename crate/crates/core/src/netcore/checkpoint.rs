//! Versioned JSON checkpoint holding named networks, their optimizer state
//! and an optional free-form manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::network::Network;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "rangegan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub network: Network,
    pub optimizer: Option<AdamState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub networks: BTreeMap<String, NetworkEntry>,
    #[serde(default)]
    pub manifest: Option<serde_json::Value>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            networks: BTreeMap::new(),
            manifest: None,
        }
    }
}

impl Checkpoint {
    pub fn insert(&mut self, name: &str, network: Network, optimizer: Option<AdamState>) {
        self.networks
            .insert(name.to_string(), NetworkEntry { network, optimizer });
    }

    pub fn get(&self, name: &str) -> Result<&NetworkEntry> {
        self.networks
            .get(name)
            .ok_or_else(|| Error::config(format!("checkpoint has no network named {name:?}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.line(),
            message: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ckpt.format, ckpt.version
            )));
        }
        for (name, entry) in &ckpt.networks {
            entry
                .network
                .validate()
                .map_err(|e| Error::config(format!("network {name:?}: {e}")))?;
            if let Some(opt) = &entry.optimizer {
                let shapes: Vec<usize> = entry.network.param_slices().iter().map(|s| s.len()).collect();
                let m: Vec<usize> = opt.m.iter().map(Vec::len).collect();
                let v: Vec<usize> = opt.v.iter().map(Vec::len).collect();
                if shapes != m || shapes != v {
                    return Err(Error::config(format!("optimizer state of {name:?} does not match its parameters")));
                }
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
