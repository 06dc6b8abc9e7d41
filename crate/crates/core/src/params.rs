//! Named learnable parameters and their per-pass graph bindings.

use std::cell::RefCell;
use std::collections::BTreeMap;

use bta_tensor::{Scalar, Tensor, TensorData};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: TensorData<T>,
    pub grad: TensorData<T>,
}

/// Every learnable tensor of a model, keyed by symbol name, in creation
/// order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: TensorData<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        let grad = TensorData::zeros(value.shape().to_vec());
        self.params.push(Param { name, value, grad });
        Ok(id)
    }

    /// Weight matrix drawn from `uniform(-1/sqrt(d_in), 1/sqrt(d_in))`.
    pub fn register_uniform(
        &mut self,
        name: impl Into<String>,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let data = (0..d_in * d_out)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        self.register(name, TensorData::new(vec![d_in, d_out], data)?)
    }

    pub fn register_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.register(name, TensorData::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Param<T>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn set_value(&mut self, id: ParamId, value: TensorData<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ArchitectureMismatch(format!(
                "{} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: Vec<(ParamId, TensorData<T>)>) {
        for (id, g) in grads {
            let acc = &mut self.params[id.0].grad;
            acc.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a = *a + b);
        }
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        self.checksum_of(|_| true)
    }

    /// Checksum restricted to parameters whose name passes `filter`.
    pub fn checksum_of(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for p in self.params.iter().filter(|p| filter(&p.name)) {
            hasher.update(p.name.as_bytes());
            for &d in p.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in p.value.data() {
                v.write_le(&mut buf);
            }
            hasher.update(&buf);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Leaves for the parameters one forward pass touches.
///
/// A leaf is created on first use, so parameters that a pass never reads
/// receive no gradient at all.
pub struct Bound<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    leaves: RefCell<Vec<Option<Tensor<T>>>>,
    track_grad: bool,
}

impl<'a, T: Scalar> Bound<'a, T> {
    /// Binding whose leaves collect gradients.
    pub fn training(store: &'a ParamStore<T>) -> Self {
        Self::new(store, true)
    }

    /// Binding for inference; nothing is recorded.
    pub fn inference(store: &'a ParamStore<T>) -> Self {
        Self::new(store, false)
    }

    fn new(store: &'a ParamStore<T>, track_grad: bool) -> Self {
        Self {
            store,
            leaves: RefCell::new(vec![None; store.len()]),
            track_grad,
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn tensor(&self, id: ParamId) -> Tensor<T> {
        let mut leaves = self.leaves.borrow_mut();
        leaves[id.0]
            .get_or_insert_with(|| Tensor::from_data(&self.store.get(id).value, self.track_grad))
            .clone()
    }

    /// Ids of the parameters read so far.
    pub fn touched(&self) -> Vec<ParamId> {
        self.leaves
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_ref().map(|_| ParamId(i)))
            .collect()
    }

    /// Gradients gathered by backward passes over this binding.
    pub fn into_grads(self) -> Vec<(ParamId, TensorData<T>)> {
        self.leaves
            .into_inner()
            .into_iter()
            .enumerate()
            .filter_map(|(i, leaf)| leaf.and_then(|t| t.grad()).map(|g| (ParamId(i), g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.register_zeros("W_1", vec![2, 2]).unwrap();
        assert!(matches!(
            store.register_zeros("W_1", vec![2, 2]),
            Err(Error::DuplicateParam(n)) if n == "W_1"
        ));
    }

    #[test]
    fn untouched_parameters_get_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let a = store.register("a", TensorData::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let _b = store.register_zeros("b", vec![3]).unwrap();
        let bound = Bound::training(&store);
        bound.tensor(a).mul(&bound.tensor(a)).unwrap().sum().backward().unwrap();
        let grads = bound.into_grads();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, a);
        assert_eq!(grads[0].1.data(), &[2.0, 4.0]);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut store = ParamStore::<f32>::new();
        let id = store.register_zeros("w", vec![2]).unwrap();
        let before = store.checksum();
        assert_eq!(before, store.clone().checksum());
        store.get_mut(id).value.data_mut()[1] = 1.0;
        assert_ne!(before, store.checksum());
        assert_eq!(before.len(), 64);
    }
}
