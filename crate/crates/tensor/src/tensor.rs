// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

use crate::error::{invalid, Result, TensorError};
use crate::kernels;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Dense row-major tensor.
///
/// The element buffer always holds exactly `shape.iter().product()` finite
/// values; constructors reject anything else.
#[derive(Clone, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(TensorError::LengthMismatch {
                op: "tensor",
                shape,
                len: data.len(),
            });
        }
        if !kernels::all_finite(&data) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from the output of an internal op, checking finiteness.
    pub(crate) fn from_op(op: &'static str, shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        debug_assert_eq!(numel(&shape), data.len());
        if !kernels::all_finite(&data) {
            return Err(TensorError::NonFinite { op });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![S::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Mutable access to the raw buffer. Used by optimizers; callers keep
    /// values finite.
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Self { shape, data: self.data })
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(invalid("dims2", format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub fn row(&self, i: usize) -> &[S] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.f64())).collect(),
        }
    }

    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let out = kernels::matmul(&self.data, &other.data, m, k, n);
        Tensor::from_op("matmul", vec![m, n], out)
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<S>> {
        if self.data.is_empty() {
            return Err(TensorError::Empty { op: "softmax" });
        }
        if axis >= self.shape.len() {
            return Err(invalid(
                "softmax",
                format!("axis {axis} out of range for {:?}", self.shape),
            ));
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let mut out = self.data.clone();
        kernels::softmax_axis(&mut out, outer, self.shape[axis], inner);
        Tensor::from_op("softmax", self.shape.clone(), out)
    }

    /// Root-mean-square over all elements jointly, accumulated in `f64`.
    pub fn rms(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(TensorError::Empty { op: "rms" });
        }
        Ok(kernels::rms(&self.data))
    }

    fn last_dim_params(&self, op: &'static str, gain: &[S], bias: Option<&[S]>) -> Result<usize> {
        let cols = *self.shape.last().ok_or(TensorError::Empty { op })?;
        if cols == 0 || self.data.is_empty() {
            return Err(TensorError::Empty { op });
        }
        if gain.len() != cols || bias.is_some_and(|b| b.len() != cols) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![gain.len()],
            });
        }
        Ok(cols)
    }

    /// Layer normalization over the last axis, then `gain * x + bias`.
    pub fn layer_norm(&self, gain: &[S], bias: Option<&[S]>) -> Result<Tensor<S>> {
        let cols = self.last_dim_params("layer_norm", gain, bias)?;
        let (y, _) = kernels::layer_norm(&self.data, gain, bias, cols);
        Tensor::from_op("layer_norm", self.shape.clone(), y)
    }

    /// RMS normalization over the last axis, then `gain * x`.
    pub fn rms_norm(&self, gain: &[S]) -> Result<Tensor<S>> {
        let cols = self.last_dim_params("rms_norm", gain, None)?;
        let (y, _) = kernels::rms_norm(&self.data, gain, cols);
        Tensor::from_op("rms_norm", self.shape.clone(), y)
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor<S>> {
        let data = self.data.iter().map(|v| S::of(v.f64() * factor)).collect();
        Tensor::from_op("scale", self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect();
        Tensor::from_op("add", self.shape.clone(), data)
    }

    /// Index of the largest element of row `i`; ties resolve to the lowest index.
    pub fn argmax_row(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        best
    }
}

/// Mean cross-entropy of `(positions, vocab)` logits against target ids.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, targets: &[usize]) -> Result<f64> {
    let (rows, vocab) = logits.dims2()?;
    check_targets(rows, vocab, targets)?;
    let (loss, _) = kernels::cross_entropy(logits.data(), targets, vocab);
    if !loss.is_finite() {
        return Err(TensorError::NonFinite { op: "cross_entropy" });
    }
    Ok(loss)
}

pub(crate) fn check_targets(rows: usize, vocab: usize, targets: &[usize]) -> Result<()> {
    if rows == 0 {
        return Err(TensorError::Empty { op: "cross_entropy" });
    }
    if targets.len() != rows {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: vec![rows, vocab],
            rhs: vec![targets.len()],
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= vocab) {
        return Err(TensorError::TargetOutOfRange {
            op: "cross_entropy",
            target: t,
            vocab,
        });
    }
    Ok(())
}

/// I.i.d. `N(0, sigma^2)` samples drawn from `rng`. `sigma == 0` yields exact zeros.
pub fn gaussian(shape: Vec<usize>, sigma: f64, rng: &RngStream) -> Result<Tensor<f32>> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(invalid("gaussian", format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    let n = numel(&shape);
    let data = rng.normals(n).into_iter().map(|z| (z * sigma) as f32).collect();
    Tensor::from_op("gaussian", shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(id.matmul(&m).unwrap(), m);
        let col = t(&[2, 1], &[5.0, 6.0]);
        assert_eq!(m.matmul(&col).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        assert!(matches!(
            a.matmul(&a),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            Tensor::<f32>::new(vec![1], vec![f32::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn softmax_cases() {
        let u = t(&[4], &[0.0; 4]).softmax(0).unwrap();
        assert!(u.data().iter().all(|v| (*v - 0.25).abs() < 1e-7));

        let v = Tensor::<f64>::new(vec![3], vec![0.0, 2f64.ln(), 3f64.ln()]).unwrap();
        let p = v.softmax(0).unwrap();
        for (got, want) in p.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }

        let s = t(&[2], &[1000.0, 0.0]).softmax(0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-6 && s.data()[1] < 1e-6);

        assert!(matches!(
            Tensor::<f32>::zeros(vec![0]).softmax(0),
            Err(TensorError::Empty { .. })
        ));
    }

    #[test]
    fn rms_cases() {
        assert_eq!(Tensor::<f32>::zeros(vec![3, 2]).rms().unwrap(), 0.0);
        assert_eq!(Tensor::<f32>::full(vec![5], 1.0).rms().unwrap(), 1.0);
        assert!((t(&[2], &[3.0, 4.0]).rms().unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(Tensor::<f32>::zeros(vec![0]).rms().is_err());
    }

    #[test]
    fn norm_cases() {
        let c = t(&[1, 4], &[3.0; 4]);
        assert!(c.layer_norm(&[1.0; 4], None).unwrap().data().iter().all(|v| *v == 0.0));

        let x = t(&[1, 2], &[1.0, -1.0]);
        let y = x.layer_norm(&[1.0, 1.0], Some(&[0.0, 0.0])).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-4 && (y.data()[1] + 1.0).abs() < 1e-4);

        let z = x.layer_norm(&[0.0, 0.0], Some(&[0.5, -2.0])).unwrap();
        assert_eq!(z.data(), &[0.5, -2.0]);

        let r = t(&[1, 2], &[2.0, -2.0]).rms_norm(&[1.0, 1.0]).unwrap();
        assert!((r.data()[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_cases() {
        let confident = t(&[1, 3], &[50.0, 0.0, 0.0]);
        assert!(cross_entropy(&confident, &[0]).unwrap() < 1e-12);
        let uniform = Tensor::<f32>::zeros(vec![2, 7]);
        assert!((cross_entropy(&uniform, &[1, 6]).unwrap() - 7f64.ln()).abs() < 1e-9);
        assert!(matches!(
            cross_entropy(&uniform, &[7, 0]),
            Err(TensorError::TargetOutOfRange {
                target: 7,
                vocab: 7,
                ..
            })
        ));
    }

    #[test]
    fn gaussian_cases() {
        let rng = RngStream::new(7);
        assert!(gaussian(vec![10], 0.0, &rng).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(gaussian(vec![10], -1.0, &rng).is_err());
        let a = gaussian(vec![64], 1.0, &rng).unwrap();
        let b = gaussian(vec![64], 1.0, &rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments() {
        let g = gaussian(vec![1_000_000], 1.0, &RngStream::new(2024)).unwrap();
        let n = g.numel() as f64;
        let mean = g.data().iter().map(|v| *v as f64).sum::<f64>() / n;
        let var = g.data().iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        let std = var.sqrt();
        assert!((0.99..=1.01).contains(&std), "std {std}");
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let x = t(&[1, 4], &[1.0, 3.0, 3.0, 0.0]);
        assert_eq!(x.argmax_row(0), 1);
    }
}
