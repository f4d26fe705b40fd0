//! Model checkpoints: one `.vqtn` file per weight matrix and bias vector plus
//! a `manifest.json` naming them in layer order.
//!
//! ```json
//! {"format": "vquant-mlp", "version": 1, "sizes": [64, 32, 10],
//!  "layers": [{"weights": "layer0.w.vqtn", "bias": "layer0.b.vqtn", "shape": [32, 64]}, ...]}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VqError};
use crate::io::{read_tensor, with_path, write_tensor};
use crate::tensor::DenseTensor;
use crate::train::{Layer, MlpNetwork};

pub const MODEL_FORMAT: &str = "vquant-mlp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub weights: String,
    pub bias: String,
    /// `[fan_out, fan_in]`.
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub sizes: Vec<usize>,
    pub layers: Vec<LayerEntry>,
}

pub fn save_model(dir: impl AsRef<Path>, net: &MlpNetwork) -> Result<ModelManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(net.num_layers());
    for (i, l) in net.layers().iter().enumerate() {
        let entry = LayerEntry {
            weights: format!("layer{i}.w.vqtn"),
            bias: format!("layer{i}.b.vqtn"),
            shape: [l.fan_out(), l.fan_in()],
        };
        write_tensor(dir.join(&entry.weights), &l.weights)?;
        write_tensor(dir.join(&entry.bias), &DenseTensor::vector(l.bias.clone()))?;
        layers.push(entry);
    }
    let manifest = ModelManifest { format: MODEL_FORMAT.into(), version: 1, sizes: net.sizes(), layers };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| VqError::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<MlpNetwork> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(with_path(&path))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| VqError::Format(format!("manifest: {e}")))?;
    if manifest.format != MODEL_FORMAT || manifest.version != 1 {
        return Err(VqError::Format(format!(
            "unsupported model format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let layers = manifest
        .layers
        .iter()
        .map(|e| {
            let weights = read_tensor(dir.join(&e.weights))?;
            let bias = read_tensor(dir.join(&e.bias))?.into_data();
            if weights.shape() != e.shape {
                return Err(VqError::Format(format!(
                    "{} has shape {:?}, manifest says {:?}",
                    e.weights,
                    weights.shape(),
                    e.shape
                )));
            }
            Ok(Layer { weights, bias })
        })
        .collect::<Result<Vec<_>>>()?;
    let net = MlpNetwork::new(layers).map_err(|e| VqError::Format(e.to_string()))?;
    if net.sizes() != manifest.sizes {
        return Err(VqError::Format("layer files disagree with manifest sizes".into()));
    }
    Ok(net)
}
