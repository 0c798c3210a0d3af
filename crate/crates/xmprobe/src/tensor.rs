//! Dense row-major 2-D tensors and named parameter blocks.
//!
//! Everything numeric in the toolkit is generic over [`Scalar`] so that
//! training runs in `f32` while gradient checking runs end-to-end in `f64`.

use crate::error::{Error, Result};
use rand::Rng;

/// Floating-point scalar the numeric core is generic over (`f32` or `f64`).
pub trait Scalar:
    num_traits::Float
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self {
        num_traits::NumCast::from(v).expect("f64 convertible")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar fits in f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense matrix with row-major storage.
///
/// `data.len() == rows * cols` always holds; constructors enforce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor2D<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2D::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    /// Entries drawn uniformly from `[lo, hi)`.
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| F::from_f64(rng.random_range(lo..hi)))
            .collect();
        Tensor2D { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        debug_assert!(r < self.rows);
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self * x` for a matrix of shape `rows x cols` and a vector of length `cols`.
    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![F::zero(); self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = F::zero();
            for (w, xi) in row.iter().zip(x) {
                acc = acc + *w * *xi;
            }
            *o = acc;
        }
        out
    }

    /// `self^T * y` for a vector of length `rows`; returns length `cols`.
    pub fn matvec_t(&self, y: &[F]) -> Vec<F> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![F::zero(); self.cols];
        for (r, yr) in y.iter().enumerate() {
            let row = self.row(r);
            for (o, w) in out.iter_mut().zip(row) {
                *o = *o + *yr * *w;
            }
        }
        out
    }

    /// Rank-one update `self += y * x^T` with `y.len() == rows`, `x.len() == cols`.
    pub fn add_outer(&mut self, y: &[F], x: &[F]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, yr) in y.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xi) in row.iter_mut().zip(x) {
                *w = *w + *yr * *xi;
            }
        }
    }

    pub fn same_shape(&self, other: &Tensor2D<F>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Errors if any entry is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value {v} in {what} at flat index {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor2D<T> {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64_lossy())).collect(),
        }
    }
}

pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

pub(crate) fn norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// A named parameter tensor with its gradient accumulator.
///
/// `value` and `grad` always share a shape; `grad` is zeroed at the start of
/// each training step.
#[derive(Debug, Clone)]
pub struct ParamBlock<F> {
    pub name: String,
    pub value: Tensor2D<F>,
    pub grad: Tensor2D<F>,
}

impl<F: Scalar> ParamBlock<F> {
    pub fn new(name: impl Into<String>, value: Tensor2D<F>) -> Self {
        let grad = Tensor2D::zeros(value.rows(), value.cols());
        ParamBlock {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn cast<T: Scalar>(&self) -> ParamBlock<T> {
        ParamBlock {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn from_vec_rejects_bad_length() {
        let r = Tensor2D::<f64>::from_vec(2, 3, vec![0.0; 5]);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn matvec_and_transpose_agree_with_hand_computation() {
        // [[1,2,3],[4,5,6]] * [1,0,1] = [4,10]
        let m = Tensor2D::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, 1.0]), vec![4.0, 10.0]);
        // m^T * [1,1] = [5,7,9]
        assert_eq!(m.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn add_outer_accumulates() {
        let mut m = Tensor2D::<f64>::zeros(2, 2);
        m.add_outer(&[1.0, 2.0], &[3.0, 4.0]);
        m.add_outer(&[1.0, 2.0], &[3.0, 4.0]);
        assert_relative_eq!(m.get(1, 0), 12.0);
        assert_relative_eq!(m.get(0, 1), 8.0);
    }

    #[test]
    fn ensure_finite_catches_nan() {
        let mut m = Tensor2D::<f32>::zeros(2, 2);
        assert!(m.ensure_finite("test").is_ok());
        m.set(1, 1, f32::NAN);
        assert!(matches!(m.ensure_finite("test"), Err(Error::Numeric(_))));
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let m = Tensor2D::<f32>::from_vec(1, 3, vec![0.5, -1.25, 3.0]).unwrap();
        let up: Tensor2D<f64> = m.cast();
        let back: Tensor2D<f32> = up.cast();
        assert_eq!(m, back);
    }
}
