//! Flat row-major tensors and the scalar abstraction shared by the f32
//! training path and the f64 gradient-check path.

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Scalar types the network stack runs on. f32 for training, f64 for
/// finite-difference verification.
pub trait Real: Copy + Debug + PartialOrd + Send + Sync + 'static {
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn add(self, rhs: Self) -> Self;
    fn sub(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
    fn tanh_(self) -> Self;
    /// C += alpha * A(m,k) . B(k,n), all row-major.
    ///
    /// # Safety-free wrapper
    /// Dimensions are checked by the caller ([`Tensor::matmul_into`]).
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], c: &mut [Self]);
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    fn sub(self, rhs: Self) -> Self {
        self - rhs
    }
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    fn tanh_(self) -> Self {
        self.tanh()
    }
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], c: &mut [Self]) {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    fn sub(self, rhs: Self) -> Self {
        self - rhs
    }
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    fn tanh_(self) -> Self {
        self.tanh()
    }
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], c: &mut [Self]) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// A dense row-major matrix of `rows x cols` scalars. Rank-1 data is a
/// single-row tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![T::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "tensor data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// self(m,k) . other(k,n) -> out(m,n), overwriting `out`.
    pub fn matmul_into(&self, other: &Tensor<T>, out: &mut Tensor<T>) -> Result<()> {
        if self.cols != other.rows || out.rows != self.rows || out.cols != other.cols {
            return Err(Error::dim(format!(
                "matmul shape mismatch: ({}x{}).({}x{}) -> ({}x{})",
                self.rows, self.cols, other.rows, other.cols, out.rows, out.cols
            )));
        }
        out.data.fill(T::ZERO);
        T::gemm(self.rows, self.cols, other.cols, T::ONE, &self.data, &other.data, &mut out.data);
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = Tensor::zeros(self.rows, other.cols);
        self.matmul_into(other, &mut out)?;
        Ok(out)
    }

    /// self(m,k)^T . other(m,n) -> out(k,n): used for weight gradients.
    pub fn t_matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rows != other.rows {
            return Err(Error::dim("t_matmul row mismatch"));
        }
        // transpose self into a scratch buffer, then gemm
        let mut at = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                at.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        at.matmul(other)
    }

    /// self(m,k) . other(n,k)^T -> out(m,n): used for input gradients.
    pub fn matmul_t(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols != other.cols {
            return Err(Error::dim("matmul_t col mismatch"));
        }
        let mut bt = Tensor::zeros(other.cols, other.rows);
        for r in 0..other.rows {
            for c in 0..other.cols {
                bt.data[c * other.rows + r] = other.data[r * other.cols + c];
            }
        }
        self.matmul(&bt)
    }

    /// Converts between scalar widths (f32 <-> f64).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// Horizontal concatenation of equal-row tensors.
pub fn hcat<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let rows = parts.first().map(|t| t.rows).unwrap_or(0);
    if parts.iter().any(|t| t.rows != rows) {
        return Err(Error::dim("hcat row mismatch"));
    }
    let cols: usize = parts.iter().map(|t| t.cols).sum();
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let mut at = 0;
        for p in parts {
            out.row_mut(r)[at..at + p.cols].copy_from_slice(p.row(r));
            at += p.cols;
        }
    }
    Ok(out)
}

/// Extracts a column range `[lo, hi)` of a matrix.
pub fn col_slice<T: Real>(t: &Tensor<T>, lo: usize, hi: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(t.rows, hi - lo);
    for r in 0..t.rows {
        out.row_mut(r).copy_from_slice(&t.row(r)[lo..hi]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        let a = Tensor::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_products_agree_with_manual() {
        let a = Tensor::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(2, 2, vec![1.0, 0.5, -1.0, 2.0]).unwrap();
        // a^T . b = (3x2)
        let c = a.t_matmul(&b).unwrap();
        assert_eq!(c.rows, 3);
        assert_eq!(c.cols, 2);
        assert_eq!(c.data[0], 1.0 * 1.0 + 4.0 * -1.0);
        // a . a^T would need matching cols; use matmul_t
        let d = a.matmul_t(&a).unwrap();
        assert_eq!(d.rows, 2);
        assert_eq!(d.cols, 2);
        assert_eq!(d.data[0], 1.0 + 4.0 + 9.0);
    }

    #[test]
    fn hcat_and_slice_roundtrip() {
        let a = Tensor::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(2, 1, vec![9.0, 8.0]).unwrap();
        let c = hcat(&[&a, &b]).unwrap();
        assert_eq!(c.cols, 3);
        assert_eq!(c.row(1), &[3.0, 4.0, 8.0]);
        let back = col_slice(&c, 0, 2);
        assert_eq!(back.data, a.data);
    }
}
