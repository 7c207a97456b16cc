use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat parameter arrays with a shape manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn capture<P: ParamSet + ?Sized>(params: &P) -> Self {
        let tensors = params
            .manifest()
            .into_iter()
            .zip(params.tensors())
            .map(|((name, shape), data)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Self { tensors }
    }

    /// Copies stored values into `params`, which must have the same manifest.
    pub fn restore<P: ParamSet + ?Sized>(&self, params: &mut P) -> Result<()> {
        let manifest = params.manifest();
        if manifest.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                manifest.len()
            )));
        }
        for ((name, shape), rec) in manifest.iter().zip(&self.tensors) {
            if *name != rec.name || *shape != rec.shape {
                return Err(Error::Checkpoint(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    rec.name, rec.shape
                )));
            }
            if rec.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("{name}: data length does not match shape")));
            }
        }
        for (dst, rec) in params.tensors_mut().into_iter().zip(&self.tensors) {
            dst.copy_from_slice(&rec.data);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
