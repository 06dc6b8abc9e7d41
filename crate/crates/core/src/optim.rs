//! Adaptive-moment optimizer.

use bta_tensor::{Scalar, TensorData};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<TensorData<T>>,
    pub v: Vec<TensorData<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| TensorData::zeros(p.value.shape().to_vec()))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from the gradients accumulated in `store`:
    /// `θ -= lr · m̂ / (sqrt(v̂) + ε)` with bias-corrected moments.
    ///
    /// Fails before touching anything if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64, cfg: AdamConfig) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.all_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        let (c1, c2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
        let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(cfg.eps));
        let one = T::one();
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let values = p.value.data_mut();
            let grads = p.grad.data();
            let (ms, vs) = (m.data_mut(), v.data_mut());
            for i in 0..values.len() {
                let g = grads[i];
                ms[i] = b1 * ms[i] + (one - b1) * g;
                vs[i] = b2 * vs[i] + (one - b2) * g * g;
                let m_hat = ms[i] / c1;
                let v_hat = vs[i] / c2;
                values[i] = values[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("x", TensorData::new(vec![1], vec![0.5]).unwrap()).unwrap();
        let mut adam = AdamState::new(&store);
        store.get_mut(id).grad.data_mut()[0] = 1.0;
        adam.step(&mut store, 1e-3, AdamConfig::default()).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε).
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((store.get(id).value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::<f32>::new();
        store.register("x", TensorData::new(vec![2], vec![1.0, -2.0]).unwrap()).unwrap();
        let before = store.checksum();
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, 1e-4, AdamConfig::default()).unwrap();
        assert_eq!(before, store.checksum());
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = ParamStore::<f32>::new();
        let id = store.register_zeros("W_bad", vec![1]).unwrap();
        store.get_mut(id).grad.data_mut()[0] = f32::NAN;
        let mut adam = AdamState::new(&store);
        let err = adam.step(&mut store, 1e-4, AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(n) if n == "W_bad"));
        assert_eq!(adam.step, 0);
    }
}
