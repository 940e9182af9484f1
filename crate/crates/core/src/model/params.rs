use std::collections::HashSet;
use std::path::Path;

use crate::{Error, Result};

/// Named, shaped `f32` tensor. The unit of parameter exchange.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_control) {
            return Err(Error::Params(format!("invalid tensor name {name:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Params(format!(
                "tensor {name}: shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn spec(&self) -> TensorSpec {
        TensorSpec {
            name: self.name.clone(),
            shape: self.shape.clone(),
        }
    }
}

/// Name and shape of one tensor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Ordered list of tensor names and shapes describing a model.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Manifest(pub Vec<TensorSpec>);

impl Manifest {
    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.0.iter().find(|s| s.name == name)
    }

    pub fn zeros(&self) -> ModelParams {
        ModelParams::new(
            self.0
                .iter()
                .map(|s| NamedTensor::zeros(s.name.clone(), s.shape.clone()).expect("manifest entries are valid"))
                .collect(),
        )
        .expect("manifest names are unique")
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    pub fn new(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Params(format!("duplicate tensor name {}", t.name)));
            }
        }
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<NamedTensor> {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensor `name`, which must have exactly `shape`.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&NamedTensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Params(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::Params(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest(self.tensors.iter().map(NamedTensor::spec).collect())
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Loads values from `other` by name, requiring identical shapes.
    /// Tensors absent from `other` are left untouched.
    pub fn load_from(&mut self, other: &ModelParams) -> Result<()> {
        for t in &mut self.tensors {
            if let Some(src) = other.get(&t.name) {
                if src.shape != t.shape {
                    return Err(Error::Params(format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        t.name, src.shape, t.shape
                    )));
                }
                t.data.copy_from_slice(&src.data);
            }
        }
        Ok(())
    }
}

/// Writes the parameter wire encoding verbatim (conventionally `*.fp`).
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = crate::federation::serialize_params(params)?;
    crate::imaging::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(crate::federation::deserialize_params(&bytes)?)
}
