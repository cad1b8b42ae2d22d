//! Checkpoint container for [`ModelParams`].
//!
//! JSON document, version 1:
//!
//! ```text
//! {
//!   "format": "prognostics-checkpoint",
//!   "version": 1,
//!   "params": [
//!     { "name": "trunk.0.lstm.w_x", "shape": [24, 512], "l2_exempt": false,
//!       "data": [ ...row-major values... ] },
//!     ...
//!   ]
//! }
//! ```
//!
//! Values are written with shortest round-trip formatting and parsed with
//! correct rounding, so a save/load cycle is bitwise exact for `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "prognostics-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    l2_exempt: bool,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredCheckpoint {
    format: String,
    version: u32,
    params: Vec<StoredParam>,
}

pub fn to_json<F: Scalar>(params: &ModelParams<F>) -> Result<String> {
    let doc = StoredCheckpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        params: params
            .iter()
            .map(|p| StoredParam {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                l2_exempt: p.l2_exempt,
                data: p.tensor.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn from_json<F: Scalar>(text: &str) -> Result<ModelParams<F>> {
    let doc: StoredCheckpoint = serde_json::from_str(text)?;
    if doc.format != CHECKPOINT_FORMAT {
        return Err(Error::data(format!("not a checkpoint: format {:?}", doc.format)));
    }
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            doc.version
        )));
    }
    let mut params = ModelParams::new();
    for p in doc.params {
        let t = Tensor::new(p.shape, p.data.into_iter().map(F::of).collect())?;
        params.insert(p.name, t, p.l2_exempt)?;
    }
    Ok(params)
}

pub fn save<F: Scalar>(params: &ModelParams<F>, path: &Path) -> Result<()> {
    fs::write(path, to_json(params)?)?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<ModelParams<F>> {
    from_json(&fs::read_to_string(path)?)
}
