//! Forward implementations of every differentiable operation.

use crate::error::{Result, TensorError};
use crate::kernels::{axis_split, gemm_acc, transpose2};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which operand of a binary op is a broadcast one-element tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bcast {
    None,
    Lhs,
    Rhs,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    MatMul,
    Transpose,
    Add(Bcast),
    Sub(Bcast),
    Mul(Bcast),
    Affine { scale: f64 },
    Relu,
    Sigmoid,
    Tanh,
    Powf(f64),
    Softmax { axis: usize, scale: f64 },
    SumAxis { axis: usize },
    SumAll,
    MeanAxis { axis: usize },
    Cat { axis: usize },
    Narrow { axis: usize, start: usize },
    Reshape,
    ScaleRows,
    AddRow,
    Index(usize),
    NegLog { index: usize, eps: f64 },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Add(_) => "add",
            Op::Sub(_) => "sub",
            Op::Mul(_) => "mul",
            Op::Affine { .. } => "affine",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Powf(_) => "powf",
            Op::Softmax { .. } => "softmax",
            Op::SumAxis { .. } => "sum_axis",
            Op::SumAll => "sum",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Cat { .. } => "cat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape => "reshape",
            Op::ScaleRows => "scale_rows",
            Op::AddRow => "add_row",
            Op::Index(_) => "index",
            Op::NegLog { .. } => "neg_log",
        }
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::Axis {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

fn binary_bcast<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::None)
    } else if b.numel() == 1 {
        Ok(Bcast::Rhs)
    } else if a.numel() == 1 {
        Ok(Bcast::Lhs)
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

impl<T: Scalar> Tensor<T> {
    fn zip_with(
        &self,
        other: &Tensor<T>,
        op_name: &'static str,
        make: fn(Bcast) -> Op,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let bc = binary_bcast(op_name, self, other)?;
        let (a, b) = (self.data(), other.data());
        let (shape, data): (Vec<usize>, Vec<T>) = match bc {
            Bcast::None => (
                self.shape().to_vec(),
                a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Bcast::Rhs => (self.shape().to_vec(), a.iter().map(|&x| f(x, b[0])).collect()),
            Bcast::Lhs => (other.shape().to_vec(), b.iter().map(|&y| f(a[0], y)).collect()),
        };
        Ok(Tensor::from_op(shape, data, make(bc), vec![self.clone(), other.clone()]))
    }

    fn map_unary(&self, op: Op, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, op, vec![self.clone()])
    }

    /// Matrix product of `m×k` and `k×n` tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        let (m, k) = self.dims2().map_err(|_| mismatch())?;
        let (k2, n) = other.dims2().map_err(|_| mismatch())?;
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.data(), other.data(), &mut out, m, k, n, false, false);
        Ok(Tensor::from_op(vec![m, n], out, Op::MatMul, vec![self.clone(), other.clone()]))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let data = transpose2(self.data(), r, c);
        Ok(Tensor::from_op(vec![c, r], data, Op::Transpose, vec![self.clone()]))
    }

    /// Elementwise sum; either side may be a one-element tensor.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "sub", Op::Sub, |x, y| x - y)
    }

    /// Hadamard product; either side may be a one-element tensor.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "mul", Op::Mul, |x, y| x * y)
    }

    /// `scale * x + shift` elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor<T> {
        let (s, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        self.map_unary(Op::Affine { scale }, |x| x * s + b)
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        self.affine(c, 0.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        self.affine(1.0, c)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.affine(-1.0, 0.0)
    }

    pub fn relu(&self) -> Tensor<T> {
        crate::gradcheck::observe_relu_inputs(self.data());
        self.map_unary(Op::Relu, |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.map_unary(Op::Sigmoid, |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.map_unary(Op::Tanh, |x| x.tanh())
    }

    pub fn powf(&self, p: f64) -> Tensor<T> {
        let pt = T::from_f64_lossy(p);
        self.map_unary(Op::Powf(p), |x| x.powf(pt))
    }

    /// `exp(scale * x)` normalised along `axis`, stabilised by subtracting
    /// the per-slice maximum.
    pub fn softmax(&self, axis: usize, scale: f64) -> Result<Tensor<T>> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let s = T::from_f64_lossy(scale);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| o * len * inner + i * inner + j;
                let mut max = T::neg_infinity();
                for i in 0..len {
                    max = max.max(s * x[idx(i)]);
                }
                let mut sum = T::zero();
                for i in 0..len {
                    let e = (s * x[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    sum = sum + e;
                }
                for i in 0..len {
                    out[idx(i)] = out[idx(i)] / sum;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Softmax { axis, scale },
            vec![self.clone()],
        ))
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&self, scale: f64) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(TensorError::Rank {
                op: "softmax_rows",
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        self.softmax(1, scale)
    }

    fn reduce_axis(&self, op_name: &'static str, axis: usize, mean: bool) -> Result<Tensor<T>> {
        check_axis(op_name, self.shape(), axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        if len == 0 {
            return Err(TensorError::EmptyReduction { op: op_name });
        }
        let x = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let base = o * len * inner + i * inner;
                for j in 0..inner {
                    out[o * inner + j] = out[o * inner + j] + x[base + j];
                }
            }
        }
        if mean {
            let n = T::from_usize(len).expect("axis length fits the scalar type");
            for v in &mut out {
                *v = *v / n;
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        let op = if mean {
            Op::MeanAxis { axis }
        } else {
            Op::SumAxis { axis }
        };
        Ok(Tensor::from_op(shape, out, op, vec![self.clone()]))
    }

    /// Sum along `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        self.reduce_axis("sum_axis", axis, false)
    }

    /// Arithmetic mean along `axis`, removing it from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        self.reduce_axis("mean_axis", axis, true)
    }

    /// Sum of every element as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        Tensor::from_op(Vec::new(), vec![total], Op::SumAll, vec![self.clone()])
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn cat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(TensorError::NoInputs { op: "cat" })?;
        check_axis("cat", first.shape(), axis)?;
        let mut shape = first.shape().to_vec();
        let mut total = 0;
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "cat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            total += p.shape()[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor::from_op(shape, out, Op::Cat { axis }, parts.to_vec()))
    }

    /// Concatenation along the last axis.
    pub fn concat_last_axis(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(TensorError::NoInputs {
            op: "concat_last_axis",
        })?;
        if first.rank() == 0 {
            return Err(TensorError::Rank {
                op: "concat_last_axis",
                expected: 1,
                shape: Vec::new(),
            });
        }
        Self::cat(parts, first.rank() - 1)
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis("narrow", self.shape(), axis)?;
        let (outer, full, inner) = axis_split(self.shape(), axis);
        if start + len > full {
            return Err(TensorError::OutOfRange {
                op: "narrow",
                start,
                end: start + len,
                len: full,
            });
        }
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Narrow { axis, start },
            vec![self.clone()],
        ))
    }

    /// Row `i` of a rank-2 tensor as a `1×d` tensor.
    pub fn row(&self, i: usize) -> Result<Tensor<T>> {
        self.narrow(0, i, 1)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let expected = shape.iter().product::<usize>();
        if expected != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape,
            });
        }
        Ok(Tensor::from_op(shape, self.to_vec(), Op::Reshape, vec![self.clone()]))
    }

    /// Multiplies row `i` of an `n×d` tensor by `v[i]`.
    pub fn scale_rows(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = self.dims2()?;
        if v.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let (x, s) = (self.data(), v.data());
        let out = (0..n * d).map(|idx| x[idx] * s[idx / d]).collect();
        Ok(Tensor::from_op(vec![n, d], out, Op::ScaleRows, vec![self.clone(), v.clone()]))
    }

    /// Adds a `d`-vector to every trailing `d`-slice (bias addition).
    pub fn add_row(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let d = *self.shape().last().ok_or(TensorError::Rank {
            op: "add_row",
            expected: 1,
            shape: Vec::new(),
        })?;
        if bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let b = bias.data();
        let out = self
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &x)| x + b[idx % d])
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::AddRow,
            vec![self.clone(), bias.clone()],
        ))
    }

    /// Flat element `i` as a rank-0 tensor.
    pub fn index(&self, i: usize) -> Result<Tensor<T>> {
        if i >= self.numel() {
            return Err(TensorError::OutOfRange {
                op: "index",
                start: i,
                end: i + 1,
                len: self.numel(),
            });
        }
        Ok(Tensor::from_op(Vec::new(), vec![self.data()[i]], Op::Index(i), vec![self.clone()]))
    }

    /// `-ln(max(p[i], eps))` as a rank-0 tensor.
    pub fn neg_log_at(&self, i: usize, eps: f64) -> Result<Tensor<T>> {
        if i >= self.numel() {
            return Err(TensorError::OutOfRange {
                op: "neg_log_at",
                start: i,
                end: i + 1,
                len: self.numel(),
            });
        }
        let floor = T::from_f64_lossy(eps);
        let v = -(self.data()[i].max(floor)).ln();
        Ok(Tensor::from_op(
            Vec::new(),
            vec![v],
            Op::NegLog { index: i, eps },
            vec![self.clone()],
        ))
    }
}
