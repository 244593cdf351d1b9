//! Run manifests: what was run, on which inputs, producing which files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nfseg_core::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene_io::{SceneManifest, MANIFEST};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_hash: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: None,
            scene_hash: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        json.push(b'\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over `scene.json` and every file it references, in manifest order.
/// Each file contributes its relative path, its length and its bytes.
pub fn scene_hash(dir: &Path) -> Result<String> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: SceneManifest = serde_json::from_slice(&text).map_err(|source| Error::Json {
        path: mpath.clone(),
        source,
    })?;
    let mut files: Vec<(String, PathBuf)> = vec![(MANIFEST.into(), mpath)];
    for v in &m.views {
        for rel in [Some(&v.image), v.mask.as_ref(), v.features.as_ref(), v.tokens.as_ref()].into_iter().flatten() {
            files.push((rel.clone(), dir.join(rel)));
        }
    }
    let mut h = Sha256::new();
    for (rel, p) in files {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}
