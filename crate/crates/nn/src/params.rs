use serde::{Deserialize, Serialize};

use crate::{NnError, Tensor};

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Named parameter tensors of one model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Param { name: name.into(), value, trainable: true });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].value
    }

    pub fn param(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn set_trainable(&mut self, idx: usize, trainable: bool) {
        self.params[idx].trainable = trainable;
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }

    /// Moves parameters `at..` into a new set. Indices of the returned set
    /// start at zero.
    pub fn split_off(&mut self, at: usize) -> ParamSet {
        ParamSet { params: self.params.split_off(at) }
    }

    /// Appends `other` and returns the index offset its parameters got.
    pub fn append(&mut self, other: &ParamSet) -> usize {
        let offset = self.params.len();
        self.params.extend(other.params.iter().cloned());
        offset
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn to_file(&self) -> ParamsFile {
        ParamsFile {
            schema_version: PARAMS_SCHEMA_VERSION,
            layers: self
                .params
                .iter()
                .map(|p| LayerRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds from the serialized form. Every parameter comes back trainable.
    pub fn from_file(file: &ParamsFile) -> Result<Self, NnError> {
        if file.schema_version != PARAMS_SCHEMA_VERSION {
            return Err(NnError::Format(format!(
                "unsupported params schema_version {}",
                file.schema_version
            )));
        }
        let mut set = ParamSet::new();
        for layer in &file.layers {
            set.add(layer.name.clone(), Tensor::new(layer.shape.clone(), layer.values.clone())?);
        }
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        let file: ParamsFile =
            serde_json::from_str(s).map_err(|e| NnError::Format(e.to_string()))?;
        Self::from_file(&file)
    }
}

/// On-disk parameter format: `{schema_version, layers: [{name, shape, values}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema_version: u32,
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}
