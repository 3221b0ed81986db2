use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

/// A trainable array and its accumulated gradient (same shape).
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Named parameters with gradients and per-entry optimizer state.
///
/// Entries are kept in name order so iteration, serialization and hashing
/// are deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
    pub(crate) adam: BTreeMap<String, AdamState>,
}

/// Serialized form of one parameter entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    /// Panics if `name` is unknown; model code only asks for names it created.
    pub fn param(&self, name: &str) -> &Param {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn value(&self, name: &str) -> &[f64] {
        self.param(name).value.data()
    }

    pub fn value_mut(&mut self, name: &str) -> &mut [f64] {
        self.param_mut(name).value.data_mut()
    }

    pub fn grad(&self, name: &str) -> &[f64] {
        self.param(name).grad.data()
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut [f64] {
        self.param_mut(name).grad.data_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across entries.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Multiply every accumulated gradient by `factor`.
    pub fn scale_grad(&mut self, factor: f64) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .values()
            .all(|p| p.value.is_finite() && p.grad.is_finite())
    }

    pub fn to_records(&self) -> Vec<NamedArray> {
        self.entries
            .iter()
            .map(|(name, p)| NamedArray {
                name: name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<NamedArray>) -> Result<Self> {
        let mut set = Self::new();
        for r in records {
            let value = Tensor::new(r.shape, r.values)?;
            set.insert(r.name, value)?;
        }
        Ok(set)
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, p) in &self.entries {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((p.value.shape().len() as u64).to_le_bytes());
            for &d in p.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_grads_match_shape() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2, 3])).unwrap();
        assert!(p.insert("w", Tensor::zeros(&[1])).is_err());
        assert_eq!(p.param("w").grad.shape(), &[2, 3]);
    }

    #[test]
    fn records_round_trip_preserves_hash() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::new(vec![2], vec![0.1, -3.5]).unwrap())
            .unwrap();
        p.insert("a", Tensor::new(vec![1], vec![1e-300]).unwrap())
            .unwrap();
        let q = ParamSet::from_records(p.to_records()).unwrap();
        assert_eq!(p.content_hash(), q.content_hash());
        q.value("a");
        let mut r = q.clone();
        r.value_mut("a")[0] = 2e-300;
        assert_ne!(q.content_hash(), r.content_hash());
    }
}
