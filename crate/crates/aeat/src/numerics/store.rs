//! Named parameter storage with deterministic ordering.

use crate::error::{Error, Result};
use std::collections::HashMap;

/// A dense row-major 2-D array of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct HostTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl HostTensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "tensor data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered map of name -> tensor. Insertion order is the canonical order used
/// for flattening, checkpoint manifests, and optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<HostTensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: HostTensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Usage(format!("duplicate parameter name: {name}")));
        }
        let idx = self.tensors.len();
        self.index.insert(name.to_string(), idx);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(idx)
    }

    pub fn idx(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown parameter: {name}")))
    }

    pub fn get(&self, idx: usize) -> &HostTensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut HostTensor {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &HostTensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(HostTensor::len).sum()
    }

    /// Concatenate all tensors in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Write a flat vector (as produced by [`flatten`](Self::flatten)) back.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_scalars() {
            return Err(Error::Shape(format!(
                "flat length {} != total scalars {}",
                flat.len(),
                self.n_scalars()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    /// Gradient (or moment) buffers aligned with this store.
    pub fn zeros_like(&self) -> GradStore {
        GradStore {
            grads: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }
}

/// Per-parameter buffers aligned with a [`ParamStore`]'s canonical order.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub grads: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Elementwise accumulate another grad store (same layout).
    pub fn add_assign(&mut self, other: &GradStore) {
        for (a, b) in self.grads.iter_mut().zip(other.grads.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_canonical() {
        let mut s = ParamStore::new();
        s.insert("b", HostTensor::zeros(1, 2)).unwrap();
        s.insert("a", HostTensor::zeros(2, 2)).unwrap();
        let names: Vec<_> = s.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["b", "a"]);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", HostTensor::zeros(1, 1)).unwrap();
        assert!(s.insert("w", HostTensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let mut s = ParamStore::new();
        s.insert("w", HostTensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        s.insert("b", HostTensor::from_vec(1, 2, vec![5.0, 6.0]).unwrap())
            .unwrap();
        let flat = s.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut s2 = s.clone();
        s2.unflatten(&flat).unwrap();
        assert_eq!(s2.get(0).data, s.get(0).data);
    }

    #[test]
    fn unflatten_length_checked() {
        let mut s = ParamStore::new();
        s.insert("w", HostTensor::zeros(2, 3)).unwrap();
        assert!(s.unflatten(&[0.0; 5]).is_err());
    }
}
