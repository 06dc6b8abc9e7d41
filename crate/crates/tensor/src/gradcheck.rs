//! Central finite differences, used as an independent oracle for the
//! analytic gradients, plus a monitor for ReLU kinks.

use std::cell::Cell;

use crate::data::TensorData;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `x`:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element `i`.
///
/// `f` receives constant tensors, so nothing it builds is tracked.
pub fn finite_difference_gradient<T, F, E>(mut f: F, x: &TensorData<T>, h: f64) -> Result<TensorData<T>, E>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T, E>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = TensorData::zeros(x.shape().to_vec());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = T::from_f64_lossy(orig.as_f64() + h);
        let plus = f(&Tensor::constant(&probe))?.as_f64();
        probe.data_mut()[i] = T::from_f64_lossy(orig.as_f64() - h);
        let minus = f(&Tensor::constant(&probe))?.as_f64();
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = T::from_f64_lossy((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps gradients that are numerically zero from turning
/// rounding noise into a large ratio.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

thread_local! {
    static RELU_MARGIN: Cell<Option<f64>> = const { Cell::new(None) };
}

pub(crate) fn observe_relu_inputs<T: Scalar>(xs: &[T]) {
    RELU_MARGIN.with(|m| {
        if let Some(cur) = m.get() {
            let min = xs.iter().fold(cur, |acc, v| acc.min(v.as_f64().abs()));
            m.set(Some(min));
        }
    });
}

/// Runs `f` and reports the smallest `|x|` fed to any `relu` on this thread
/// while it ran (`f64::INFINITY` when no relu ran).
///
/// A finite-difference probe of size `h` cannot cross a ReLU kink when the
/// margin comfortably exceeds the induced change in pre-activations.
pub fn track_relu_margin<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let prev = RELU_MARGIN.with(|m| m.replace(Some(f64::INFINITY)));
    let out = f();
    let margin = RELU_MARGIN.with(|m| m.replace(prev)).unwrap_or(f64::INFINITY);
    if let Some(p) = prev {
        RELU_MARGIN.with(|m| m.set(Some(p.min(margin))));
    }
    (out, margin)
}
