//! Named parameter storage and matching gradient buffers.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of uniquely named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name: architectures are
    /// built by code, so a clash is a programming error.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, tensor });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.tensor.sq_norm()).sum::<f64>().sqrt()
    }

    /// Replaces every tensor with the same-named tensor from `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape(
                "ParamStore::load_from",
                format!("{} parameters vs {}", other.len(), self.len()),
            ));
        }
        for entry in &mut self.entries {
            let src = other.by_name(&entry.name).ok_or_else(|| {
                Error::shape("ParamStore::load_from", format!("missing `{}`", entry.name))
            })?;
            entry.tensor.check_same_shape(src, "ParamStore::load_from")?;
            entry.tensor = src.clone();
        }
        Ok(())
    }
}

/// Gradient buffers aligned index-for-index with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            grads: params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.tensor.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub(crate) fn slot_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.grads[index]
    }

    pub fn as_slice(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape("Gradients::accumulate", "misaligned gradient sets"));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.check_same_shape(b, "Gradients::accumulate")?;
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f32) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Sums per-sample gradients in the given order and divides by the count.
    pub fn mean_of(parts: &[Gradients]) -> Result<Gradients> {
        let mut acc = parts
            .first()
            .cloned()
            .ok_or_else(|| Error::shape("Gradients::mean_of", "no gradients"))?;
        for p in &parts[1..] {
            acc.accumulate(p)?;
        }
        acc.scale(1.0 / parts.len() as f32);
        Ok(acc)
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt()
    }
}

/// Kaiming-uniform initialisation for a weight with the given fan-in.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::new();
        p.add("a", Tensor::scalar(1.0));
        p.add("a", Tensor::scalar(2.0));
    }

    #[test]
    fn mean_of_gradients() {
        let mut p = ParamStore::new();
        p.add("w", Tensor::zeros(&[2]));
        let mut a = Gradients::zeros_like(&p);
        a.slot_mut(0).data_mut().copy_from_slice(&[1.0, 2.0]);
        let mut b = Gradients::zeros_like(&p);
        b.slot_mut(0).data_mut().copy_from_slice(&[3.0, 6.0]);
        let m = Gradients::mean_of(&[a, b]).unwrap();
        assert_eq!(m.as_slice()[0].data(), &[2.0, 4.0]);
    }
}
