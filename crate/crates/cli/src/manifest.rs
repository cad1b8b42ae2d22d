//! Model manifest: everything besides the parameters needed to rebuild a
//! trained network and reproduce its predictions.
//!
//! Stored as `manifest.json` next to `checkpoint.json`.

use std::path::Path;

use prognostics::models::{ArchitectureSpec, ModelKind, TrainConfig};
use prognostics::pipeline::{NormalizationStats, WindowingConfig};
use prognostics::{diffcore::checkpoint, Error, Network};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FORMAT: &str = "prognostics-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub architecture: ArchitectureSpec,
    pub input_dim: usize,
    pub window: usize,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub windowing: WindowingConfig,
    pub normalization: Option<NormalizationStats>,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub diverged: Option<String>,
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<(), Error> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, Error> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::config(format!(
                "{}: unsupported manifest {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }
}

/// Writes the parameters and manifest of `net` into `dir`.
pub fn save_model(dir: &Path, net: &Network, manifest: &Manifest) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    checkpoint::save(&net.params, &dir.join(CHECKPOINT_FILE))?;
    manifest.save(dir)
}

/// Rebuilds the network stored in `dir`. A checkpoint that does not fit the
/// manifest's architecture is a configuration error.
pub fn load_model(dir: &Path) -> Result<(Network, Manifest), Error> {
    let manifest = Manifest::load(dir)?;
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::config(format!("missing checkpoint {}", path.display())));
    }
    let params = checkpoint::load(&path)?;
    let net = Network::with_params(
        manifest.kind,
        manifest.architecture.clone(),
        manifest.input_dim,
        manifest.window,
        params,
    )?;
    Ok((net, manifest))
}
