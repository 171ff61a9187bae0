// SPDX-License-Identifier: MIT OR Apache-2.0

//! Floating-point element types the engine is generic over.
//!
//! Models store and train in `f32`; the `f64` instantiation exists so the
//! same recorded computation can be re-evaluated on a 64-bit reference path
//! (finite-difference gradient checks).

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Strided read-only view of a row-major (or transposed) matrix.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, S> MatRef<'a, S> {
    /// Dense row-major `rows x cols` view.
    pub fn row_major(data: &'a [S], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// View with explicit strides, e.g. one head's column block of a wider matrix.
    pub fn strided(data: &'a [S], rows: usize, cols: usize, row_stride: usize, col_stride: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride,
            col_stride,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn assert_in_bounds(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// Element type of a tensor.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + 'static {
    /// `c = a * b + beta * c`, where `c` is `a.rows x b.cols` with the given row stride.
    fn gemm_raw(a: MatRef<'_, Self>, b: MatRef<'_, Self>, beta: Self, c: &mut [Self], c_row_stride: usize);

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm_raw(a: MatRef<'_, Self>, b: MatRef<'_, Self>, beta: Self, c: &mut [Self], c_row_stride: usize) {
                assert_eq!(a.cols, b.rows, "gemm inner dimension");
                a.assert_in_bounds();
                b.assert_in_bounds();
                let (m, k, n) = (a.rows, a.cols, b.cols);
                if m == 0 || n == 0 {
                    return;
                }
                assert!((m - 1) * c_row_stride + n <= c.len(), "gemm output out of bounds");
                if k == 0 {
                    for i in 0..m {
                        for v in &mut c[i * c_row_stride..i * c_row_stride + n] {
                            *v = if beta == 0.0 { 0.0 } else { *v * beta };
                        }
                    }
                    return;
                }
                // SAFETY: all three views were bounds-checked above for the
                // exact (m, k, n) extents and strides passed to the kernel.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.data.as_ptr(),
                        a.row_stride as isize,
                        a.col_stride as isize,
                        b.data.as_ptr(),
                        b.row_stride as isize,
                        b.col_stride as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_row_stride as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
