//! Affine layers, graph convolution stacks and the bidirectional GRU
//! question encoder.

use bta_tensor::{Scalar, Tensor, TensorData};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Identity => x,
        }
    }
}

/// `activation(x W + b)` with `W: d_in×d_out` registered as `W_{name}` and
/// `b: d_out` as `b_{name}`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.register_uniform(format!("W_{name}"), d_in, d_out, rng)?;
        let bias = store.register_zeros(format!("b_{name}"), vec![d_out])?;
        Ok(Self {
            weight,
            bias,
            activation,
            d_in,
            d_out,
        })
    }

    /// Accepts `[d_in]` or `[n, d_in]`; the output keeps the input rank.
    pub fn forward<T: Scalar>(&self, p: &Bound<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let vector = x.rank() == 1;
        let x2 = if vector {
            x.reshape(vec![1, x.numel()])?
        } else {
            x.clone()
        };
        let y = x2.matmul(&p.tensor(self.weight))?.add_row(&p.tensor(self.bias))?;
        let y = self.activation.apply(y);
        if vector {
            Ok(y.reshape(vec![self.d_out])?)
        } else {
            Ok(y)
        }
    }
}

/// How a graph convolution treats the diagonal of its weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfLoops {
    /// `Â = W + I`.
    Add,
    /// `Â = W`; the matrix already carries its self-loops.
    Existing,
}

/// Consecutive graph convolution layers `Z = relu(D^-1/2 Â D^-1/2 X W)`.
#[derive(Debug, Clone)]
pub struct GcnStack {
    pub weights: Vec<ParamId>,
    pub dims: Vec<usize>,
}

impl GcnStack {
    /// `dims` lists the channel sizes, input first; layer `i` maps
    /// `dims[i] -> dims[i + 1]` and is registered as `W_{name}[i]`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "graph convolution {name} needs at least one layer"
            )));
        }
        let weights = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| store.register_uniform(format!("W_{name}[{i}]"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            weights,
            dims: dims.to_vec(),
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &Bound<'_, T>,
        weight_matrix: &Tensor<T>,
        x: &Tensor<T>,
        loops: SelfLoops,
    ) -> Result<Tensor<T>> {
        let op = normalized_operator(weight_matrix, loops)?;
        let mut z = x.clone();
        for &w in &self.weights {
            z = op.matmul(&z)?.matmul(&p.tensor(w))?.relu();
        }
        Ok(z)
    }
}

/// `D^-1/2 Â D^-1/2` with `D = diag(row sums of Â)`.
pub fn normalized_operator<T: Scalar>(weight_matrix: &Tensor<T>, loops: SelfLoops) -> Result<Tensor<T>> {
    let (n, m) = weight_matrix.dims2()?;
    if n != m {
        return Err(bta_tensor::TensorError::ShapeMismatch {
            op: "gcn",
            lhs: vec![n, m],
            rhs: vec![m, n],
        }
        .into());
    }
    let a_hat = match loops {
        SelfLoops::Add => weight_matrix.add(&Tensor::eye(n))?,
        SelfLoops::Existing => weight_matrix.clone(),
    };
    let degree = a_hat.sum_axis(1)?;
    if let Some((row, &sum)) = degree
        .data()
        .iter()
        .enumerate()
        .find(|(_, &d)| !(d > T::zero()))
    {
        return Err(Error::DegenerateDegree {
            row,
            sum: sum.as_f64(),
        });
    }
    let inv_sqrt = degree.powf(-0.5);
    Ok(a_hat
        .scale_rows(&inv_sqrt)?
        .t()?
        .scale_rows(&inv_sqrt)?
        .t()?)
}

/// Gated recurrent unit over `[x, h]` inputs.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub update: Linear,
    pub reset: Linear,
    pub candidate: Linear,
    pub hidden: usize,
}

impl GruCell {
    /// Gates are registered as `W_z^{dir}`, `W_r^{dir}` and `W_h^{dir}`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        dir: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut gate = |g: &str| {
            Linear::new(
                store,
                &format!("{g}^{dir}"),
                d_in + hidden,
                hidden,
                Activation::Identity,
                rng,
            )
        };
        Ok(Self {
            update: gate("z")?,
            reset: gate("r")?,
            candidate: gate("h")?,
            hidden,
        })
    }

    /// One step on `1×d_in` input and `1×hidden` state.
    pub fn step<T: Scalar>(&self, p: &Bound<'_, T>, x: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        let xh = Tensor::concat_last_axis(&[x.clone(), h.clone()])?;
        let z = self.update.forward(p, &xh)?.sigmoid();
        let r = self.reset.forward(p, &xh)?.sigmoid();
        let xrh = Tensor::concat_last_axis(&[x.clone(), r.mul(h)?])?;
        let candidate = self.candidate.forward(p, &xrh)?.tanh();
        let keep = z.affine(-1.0, 1.0);
        Ok(keep.mul(h)?.add(&z.mul(&candidate)?)?)
    }
}

/// Bidirectional GRU followed by a linear map of the concatenated states.
#[derive(Debug, Clone)]
pub struct BiGruEncoder {
    pub forward: GruCell,
    pub backward: GruCell,
    pub projection: Linear,
}

impl BiGruEncoder {
    /// Hidden size is `d_model / 2` per direction; the projection is `W_u`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        word_dim: usize,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = d_model / 2;
        Ok(Self {
            forward: GruCell::new(store, "fwd", word_dim, hidden, rng)?,
            backward: GruCell::new(store, "bwd", word_dim, hidden, rng)?,
            projection: Linear::new(store, "u", 2 * hidden, d_model, Activation::Identity, rng)?,
        })
    }

    /// Row `i` is `[forward state after token i, backward state after token i]`.
    pub fn hidden_states<T: Scalar>(&self, p: &Bound<'_, T>, embeddings: &Tensor<T>) -> Result<Tensor<T>> {
        let (k, _) = embeddings.dims2()?;
        if k == 0 {
            return Err(Error::EmptyQuestion);
        }
        let tokens = (0..k).map(|i| embeddings.row(i)).collect::<Result<Vec<_>, _>>()?;
        let h0 = Tensor::zeros(vec![1, self.forward.hidden]);
        let mut fwd = Vec::with_capacity(k);
        let mut h = h0.clone();
        for x in &tokens {
            h = self.forward.step(p, x, &h)?;
            fwd.push(h.clone());
        }
        let mut bwd = vec![h0.clone(); k];
        let mut h = h0;
        for (i, x) in tokens.iter().enumerate().rev() {
            h = self.backward.step(p, x, &h)?;
            bwd[i] = h.clone();
        }
        let rows = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| Tensor::concat_last_axis(&[f, b]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor::cat(&rows, 0)?)
    }

    /// `K×word_dim` embeddings to `K×d_model` question nodes.
    pub fn encode<T: Scalar>(&self, p: &Bound<'_, T>, embeddings: &Tensor<T>) -> Result<Tensor<T>> {
        let states = self.hidden_states(p, embeddings)?;
        self.projection.forward(p, &states)
    }
}

/// Identity weights and zero bias, for tests and degenerate configurations.
pub fn set_identity<T: Scalar>(store: &mut ParamStore<T>, layer: &Linear) -> Result<()> {
    let mut w = TensorData::zeros(vec![layer.d_in, layer.d_out]);
    for i in 0..layer.d_in.min(layer.d_out) {
        w.data_mut()[i * layer.d_out + i] = T::one();
    }
    store.set_value(layer.weight, w)?;
    store.set_value(layer.bias, TensorData::zeros(vec![layer.d_out]))
}
