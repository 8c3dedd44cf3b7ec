//! JSON checkpoints of named parameter tensors.
//!
//! ```text
//! {
//!   "format": "sdge-checkpoint",
//!   "version": 1,
//!   "tensors": [ { "name": "gcn0.layer0.weight", "shape": [200, 170], "data": [...] }, ... ]
//! }
//! ```
//!
//! `data` is row-major. Loading requires every tensor of the target store to
//! be present with an identical shape.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

pub const FORMAT: &str = "sdge-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    tensors: Vec<Tensor>,
}

pub fn to_json(store: &ParamStore) -> Result<String> {
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        tensors: store
            .iter()
            .map(|p| Tensor {
                name: p.name.clone(),
                shape: [p.value.nrows(), p.value.ncols()],
                data: p.value.iter().copied().collect(),
            })
            .collect(),
    };
    serde_json::to_string(&ckpt).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, to_json(store)?).map_err(|e| Error::io(path, e))
}

/// Overwrites the values in `store` from checkpoint JSON.
pub fn from_json(store: &mut ParamStore, json: &str) -> Result<()> {
    let ckpt: Checkpoint = serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let t = ckpt
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        let expected = store.get(id).value.dim();
        if (t.shape[0], t.shape[1]) != expected || t.data.len() != t.shape[0] * t.shape[1] {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {expected:?}",
                t.shape
            )));
        }
        store.get_mut(id).value =
            Array2::from_shape_vec(expected, t.data.clone()).expect("length checked");
    }
    Ok(())
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(store, &json)
}
