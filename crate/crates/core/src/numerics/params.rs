//! Named parameter storage with paired gradient buffers.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampler::NoiseStream;

/// One named weight array plus its gradient buffer.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub values: Matrix,
    pub grads: Matrix,
}

/// Flat, ordered collection of all network parameters.
///
/// Entry order is insertion order and is part of the public contract:
/// checkpoints, Adam state and gradient accumulation all walk entries in
/// this order, which keeps every run bit-reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, values: Matrix) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Usage(format!("duplicate parameter name {name:?}")));
        }
        let idx = self.entries.len();
        let grads = Matrix::zeros(values.rows, values.cols);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            values,
            grads,
        });
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    /// Glorot-uniform initialized weight matrix: U(-a, a), a = sqrt(6/(fan_in+fan_out)).
    pub fn add_xavier(&mut self, name: &str, rows: usize, cols: usize, noise: &mut NoiseStream) -> Result<usize> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| noise.rng().gen_range(-a..a))
            .collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<usize> {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn idx(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        Ok(&self.entries[self.idx(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        let i = self.idx(name)?;
        Ok(&mut self.entries[i])
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry {
        &mut self.entries[idx]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    /// Indices of entries whose name starts with `prefix` (e.g. a head group).
    pub fn group(&self, prefix: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grads.data.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.values.is_finite())
    }
}

/// Create the parameters of one MLP under `name`: layers `name.0 .. name.k-1`,
/// each with `.w` (Glorot) and `.b` (zeros). A single-entry `dims` means an
/// empty (identity) stack, which trunk-less shared heads rely on.
pub fn init_mlp(store: &mut ParamStore, name: &str, dims: &[usize], noise: &mut NoiseStream) -> Result<()> {
    for i in 0..dims.len().saturating_sub(1) {
        store.add_xavier(&format!("{name}.{i}.w"), dims[i], dims[i + 1], noise)?;
        store.add_zeros(&format!("{name}.{i}.b"), 1, dims[i + 1])?;
    }
    Ok(())
}

/// Layer names `name.0 .. name.k-1` for an MLP created by [`init_mlp`].
pub fn mlp_layer_names(name: &str, n_layers: usize) -> Vec<String> {
    (0..n_layers).map(|i| format!("{name}.{i}")).collect()
}
