//! Named parameter storage shared by the model, the optimizers and checkpoints.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to one tensor in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor with the same-named one from `other`, checking shapes.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Config(format!(
                "parameter count mismatch: expected {}, found {}",
                self.len(),
                other.len()
            )));
        }
        for i in 0..self.len() {
            let src = other
                .find(&self.names[i])
                .ok_or_else(|| Error::Config(format!("missing parameter {}", self.names[i])))?;
            let t = other.get(src);
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }
}

/// Registers freshly initialized tensors in a [`ParamSet`].
pub struct ParamInit<'a, R: rand::Rng> {
    pub params: &'a mut ParamSet,
    pub rng: &'a mut R,
}

impl<'a, R: rand::Rng> ParamInit<'a, R> {
    pub fn new(params: &'a mut ParamSet, rng: &'a mut R) -> Self {
        Self { params, rng }
    }

    /// `rows × cols` weight with entries from `N(0, 1 / rows)`.
    pub fn weight(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        let std = 1.0 / (rows as f64).sqrt();
        self.normal(name, &[rows, cols], std)
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64) -> ParamId {
        let t = Tensor::randn(shape, std, self.rng);
        self.params.add(name, t)
    }

    pub fn full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.params.add(name, Tensor::full(shape, value))
    }
}
