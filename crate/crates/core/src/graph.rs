//! Appearance, motion and question graph construction.

use bta_tensor::{Scalar, Tensor, TensorData};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A syntactic dependency between two question tokens (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, String)", into = "(usize, usize, String)")]
pub struct DependencyEdge {
    pub head: usize,
    pub dependent: usize,
    pub relation: String,
}

impl DependencyEdge {
    pub fn new(head: usize, dependent: usize, relation: impl Into<String>) -> Self {
        Self {
            head,
            dependent,
            relation: relation.into(),
        }
    }

    /// Same edge with both endpoints moved by `offset`.
    pub fn shifted(&self, offset: usize) -> Self {
        Self::new(self.head + offset, self.dependent + offset, self.relation.clone())
    }
}

impl From<(usize, usize, String)> for DependencyEdge {
    fn from((head, dependent, relation): (usize, usize, String)) -> Self {
        Self {
            head,
            dependent,
            relation,
        }
    }
}

impl From<DependencyEdge> for (usize, usize, String) {
    fn from(e: DependencyEdge) -> Self {
        (e.head, e.dependent, e.relation)
    }
}

/// Row-wise softmax of scaled inner products, `softmax_rows(λ X Xᵀ)`.
///
/// Shared by the visual edge weights and the question affinity.
pub fn affinity_softmax<T: Scalar>(x: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    Ok(x.matmul(&x.t()?)?.softmax_rows(lambda)?)
}

/// Edge weights of a fully connected appearance or motion graph.
pub fn visual_edge_weights<T: Scalar>(nodes: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    affinity_softmax(nodes, lambda)
}

/// Affinity `E` between question nodes.
pub fn question_affinity<T: Scalar>(u: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    affinity_softmax(u, lambda)
}

pub fn validate_edges(edges: &[DependencyEdge], tokens: usize) -> Result<()> {
    for e in edges {
        for token in [e.head, e.dependent] {
            if token >= tokens {
                return Err(Error::EdgeOutOfRange {
                    head: e.head,
                    dependent: e.dependent,
                    token,
                    tokens,
                });
            }
        }
        if e.head == e.dependent {
            return Err(Error::SelfEdge(e.head));
        }
    }
    Ok(())
}

/// Symmetric 0/1 adjacency with a unit diagonal.
pub fn adjacency_from_dependencies<T: Scalar>(edges: &[DependencyEdge], tokens: usize) -> Result<TensorData<T>> {
    validate_edges(edges, tokens)?;
    let mut a = TensorData::eye(tokens);
    for e in edges {
        a.data_mut()[e.head * tokens + e.dependent] = T::one();
        a.data_mut()[e.dependent * tokens + e.head] = T::one();
    }
    Ok(a)
}

/// `E ∘ A` with every row scaled to unit L2 norm.
pub fn question_weight_matrix<T: Scalar>(e: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    row_l2_normalize(&e.mul(a)?)
}

/// Row L2 normalization. Rows are first divided by their (constant)
/// maximum; the result is scale invariant per row, so this changes neither
/// the value nor the gradient but keeps tiny rows away from underflow.
pub fn row_l2_normalize<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, m) = x.dims2()?;
    let mut inv_max = Vec::with_capacity(n);
    for i in 0..n {
        let row = &x.data()[i * m..(i + 1) * m];
        let max = row.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
        if !(max > T::zero()) {
            return Err(Error::ZeroQuestionRow(i));
        }
        inv_max.push(T::one() / max);
    }
    let x = x.scale_rows(&Tensor::from_vec(inv_max))?;
    let sq = x.mul(&x)?.sum_axis(1)?;
    Ok(x.scale_rows(&sq.powf(-0.5))?)
}

/// Question weight matrix straight from the question nodes.
///
/// Equal to `question_weight_matrix(question_affinity(u, λ), a)`: the
/// softmax normalizer cancels under row normalization, so the affinity is
/// computed as a softmax restricted to the edges of `a`, which cannot
/// underflow on every surviving entry of a row.
pub fn question_graph<T: Scalar>(u: &Tensor<T>, a: &TensorData<T>, lambda: f64) -> Result<Tensor<T>> {
    let mask = a.map(|v| if v > T::zero() { T::zero() } else { T::from_f64_lossy(-1e30) });
    let logits = u.matmul(&u.t()?)?.scale(lambda).add(&Tensor::constant(&mask))?;
    row_l2_normalize(&logits.softmax_rows(1.0)?)
}

/// The three graphs built for one forward pass. Absent streams are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle<T> {
    pub w_v: Option<TensorData<T>>,
    pub w_m: Option<TensorData<T>>,
    pub w_q: TensorData<T>,
    pub a_q: TensorData<T>,
    pub e_q: TensorData<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_serialize_as_triples() {
        let e = DependencyEdge::new(2, 0, "nsubj");
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"[2,0,"nsubj"]"#);
        assert_eq!(serde_json::from_str::<DependencyEdge>(&s).unwrap(), e);
    }
}
