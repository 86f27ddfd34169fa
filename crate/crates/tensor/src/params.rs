use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Named parameter tensors with a stable order. Flattening walks the tensors
/// in that order, row-major within each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut set = Self::new();
        for (name, t) in entries {
            set.push(name, t)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, name: String, tensor: Tensor) -> Result<usize> {
        if self.names.contains(&name) {
            return Err(TensorError::ParamMismatch(format!("duplicate parameter {name}")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(TensorError::ParamMismatch(format!(
                "expected {} scalars, got {}",
                self.num_scalars(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Applies `f(param, delta)` elementwise against a flat vector.
    pub fn update_flat(&mut self, flat: &[f64], mut f: impl FnMut(usize, &mut f64, f64)) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(TensorError::ParamMismatch(format!(
                "expected {} scalars, got {}",
                self.num_scalars(),
                flat.len()
            )));
        }
        let mut idx = 0;
        for t in &mut self.tensors {
            for p in t.data_mut() {
                f(idx, p, flat[idx]);
                idx += 1;
            }
        }
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Graph handles for every parameter of a [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
    lens: Vec<usize>,
}

impl ParamVars {
    pub(crate) fn new(vars: Vec<(Var, usize)>) -> Self {
        let (vars, lens) = vars.into_iter().unzip();
        Self { vars, lens }
    }

    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.lens.iter().sum()
    }

    pub(crate) fn iter_with_len(&self) -> impl Iterator<Item = (Var, usize)> + '_ {
        self.vars.iter().copied().zip(self.lens.iter().copied())
    }
}
