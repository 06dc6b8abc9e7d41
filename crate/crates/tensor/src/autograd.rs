//! Reverse-mode gradient propagation.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, TensorError};
use crate::kernels::{axis_split, gemm_acc, transpose2};
use crate::ops::{Bcast, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tensor<T> {
    /// Propagates `d self / d leaf` into every reachable leaf that requires
    /// gradients. Leaf gradients accumulate across calls until
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(TensorError::NoGradient);
        }

        // Collect every node that participates in the gradient, keyed by
        // creation id. Descending ids visit consumers before producers.
        let mut nodes: BTreeMap<u64, Tensor<T>> = BTreeMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.node.id) {
                continue;
            }
            if let Some(rec) = &t.node.record {
                stack.extend(rec.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            nodes.insert(t.node.id, t);
        }

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.node.id, vec![T::one()]);

        for (id, t) in nodes.iter().rev() {
            let Some(g) = pending.remove(id) else {
                continue;
            };
            match &t.node.record {
                Some(rec) => {
                    let grads = vjp(&rec.op, &rec.parents, t, &g);
                    for (parent, pg) in rec.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        match pending.get_mut(&parent.node.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a = *a + b),
                            None => {
                                pending.insert(parent.node.id, pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

fn sum_of<T: Scalar>(g: &[T]) -> T {
    g.iter().fold(T::zero(), |acc, &v| acc + v)
}

/// Vector-Jacobian product of one recorded op. Returns one entry per parent.
fn vjp<T: Scalar>(op: &Op, parents: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
    let need = |i: usize| parents[i].requires_grad();
    match op {
        Op::MatMul => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let ga = need(0).then(|| {
                let mut ga = vec![T::zero(); m * k];
                gemm_acc(g, b.data(), &mut ga, m, n, k, false, true);
                ga
            });
            let gb = need(1).then(|| {
                let mut gb = vec![T::zero(); k * n];
                gemm_acc(a.data(), g, &mut gb, k, m, n, true, false);
                gb
            });
            vec![ga, gb]
        }
        Op::Transpose => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            vec![Some(transpose2(g, r, c))]
        }
        Op::Add(bc) | Op::Sub(bc) => {
            let sign = if matches!(op, Op::Sub(_)) { -T::one() } else { T::one() };
            let ga = need(0).then(|| match bc {
                Bcast::Lhs => vec![sum_of(g)],
                _ => g.to_vec(),
            });
            let gb = need(1).then(|| match bc {
                Bcast::Rhs => vec![sign * sum_of(g)],
                _ => g.iter().map(|&v| sign * v).collect(),
            });
            vec![ga, gb]
        }
        Op::Mul(bc) => {
            let (a, b) = (parents[0].data(), parents[1].data());
            let ga = need(0).then(|| match bc {
                Bcast::None => g.iter().zip(b).map(|(&gv, &bv)| gv * bv).collect(),
                Bcast::Rhs => g.iter().map(|&gv| gv * b[0]).collect(),
                Bcast::Lhs => vec![g.iter().zip(b).fold(T::zero(), |acc, (&gv, &bv)| acc + gv * bv)],
            });
            let gb = need(1).then(|| match bc {
                Bcast::None => g.iter().zip(a).map(|(&gv, &av)| gv * av).collect(),
                Bcast::Lhs => g.iter().map(|&gv| gv * a[0]).collect(),
                Bcast::Rhs => vec![g.iter().zip(a).fold(T::zero(), |acc, (&gv, &av)| acc + gv * av)],
            });
            vec![ga, gb]
        }
        Op::Affine { scale, .. } => {
            let s = T::from_f64_lossy(*scale);
            vec![Some(g.iter().map(|&v| v * s).collect())]
        }
        Op::Relu => {
            let x = parents[0].data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect(),
            )]
        }
        Op::Sigmoid => {
            let y = out.data();
            vec![Some(
                g.iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                    .collect(),
            )]
        }
        Op::Tanh => {
            let y = out.data();
            vec![Some(
                g.iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * (T::one() - yv * yv))
                    .collect(),
            )]
        }
        Op::Powf(p) => {
            let pt = T::from_f64_lossy(*p);
            let pm1 = T::from_f64_lossy(p - 1.0);
            let x = parents[0].data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(&gv, &xv)| gv * pt * xv.powf(pm1))
                    .collect(),
            )]
        }
        Op::Softmax { axis, scale } => {
            let (outer, len, inner) = axis_split(out.shape(), *axis);
            let s = T::from_f64_lossy(*scale);
            let y = out.data();
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |i: usize| o * len * inner + i * inner + j;
                    let mut dot = T::zero();
                    for i in 0..len {
                        dot = dot + g[idx(i)] * y[idx(i)];
                    }
                    for i in 0..len {
                        gx[idx(i)] = s * y[idx(i)] * (g[idx(i)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }
        Op::SumAxis { axis } | Op::MeanAxis { axis } => {
            let in_shape = parents[0].shape();
            let (outer, len, inner) = axis_split(in_shape, *axis);
            let factor = if matches!(op, Op::MeanAxis { .. }) {
                T::one() / T::from_usize(len).expect("axis length fits")
            } else {
                T::one()
            };
            let mut gx = vec![T::zero(); parents[0].numel()];
            for o in 0..outer {
                for i in 0..len {
                    for j in 0..inner {
                        gx[o * len * inner + i * inner + j] = g[o * inner + j] * factor;
                    }
                }
            }
            vec![Some(gx)]
        }
        Op::SumAll => vec![Some(vec![g[0]; parents[0].numel()])],
        Op::Cat { axis } => {
            let (outer, _, inner) = axis_split(out.shape(), *axis);
            let total = out.shape()[*axis];
            let mut offset = 0;
            parents
                .iter()
                .map(|p| {
                    let len = p.shape()[*axis];
                    let part = p.requires_grad().then(|| {
                        let mut gp = Vec::with_capacity(p.numel());
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            gp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        gp
                    });
                    offset += len;
                    part
                })
                .collect()
        }
        Op::Narrow { axis, start } => {
            let in_shape = parents[0].shape();
            let (outer, full, inner) = axis_split(in_shape, *axis);
            let len = out.shape()[*axis];
            let mut gx = vec![T::zero(); parents[0].numel()];
            for o in 0..outer {
                let dst = o * full * inner + start * inner;
                let src = o * len * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            vec![Some(gx)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::ScaleRows => {
            let (x, v) = (&parents[0], &parents[1]);
            let d = x.shape()[1];
            let gx = need(0).then(|| {
                g.iter()
                    .enumerate()
                    .map(|(idx, &gv)| gv * v.data()[idx / d])
                    .collect()
            });
            let gv = need(1).then(|| {
                g.chunks(d)
                    .zip(x.data().chunks(d))
                    .map(|(gr, xr)| gr.iter().zip(xr).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
                    .collect()
            });
            vec![gx, gv]
        }
        Op::AddRow => {
            let d = parents[1].numel();
            let gb = need(1).then(|| {
                let mut gb = vec![T::zero(); d];
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                }
                gb
            });
            vec![need(0).then(|| g.to_vec()), gb]
        }
        Op::Index(i) => {
            let mut gx = vec![T::zero(); parents[0].numel()];
            gx[*i] = g[0];
            vec![Some(gx)]
        }
        Op::NegLog { index, eps } => {
            let p = parents[0].data()[*index];
            let mut gx = vec![T::zero(); parents[0].numel()];
            if p > T::from_f64_lossy(*eps) {
                gx[*index] = -g[0] / p;
            }
            vec![Some(gx)]
        }
    }
}
