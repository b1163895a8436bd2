//! Dense 2-d value arrays.
//!
//! Everything in the engine is a matrix: row vectors are `1 x n`, column
//! vectors `n x 1`, scalars `1 x 1`. Keeping one layout avoids a zoo of
//! broadcasting rules in the tape ops.

use crate::scalar::Scalar;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

/// A dense row-major matrix of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    data: Array2<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(data: Array2<S>) -> Self {
        // normalize to contiguous row-major so as_slice is always valid
        let data = if data.is_standard_layout() {
            data
        } else {
            let dim = data.raw_dim();
            Array2::from_shape_vec(dim, data.iter().copied().collect()).unwrap()
        };
        Tensor { data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(Array2::zeros((rows, cols)))
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Tensor::new(Array2::from_elem((rows, cols), value))
    }

    pub fn scalar(value: S) -> Self {
        Tensor::filled(1, 1, value)
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<S>) -> Self {
        assert_eq!(rows * cols, values.len(), "shape does not match data length");
        Tensor::new(Array2::from_shape_vec((rows, cols), values).unwrap())
    }

    /// Build from nested rows; handy in tests.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut flat = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            flat.extend_from_slice(row);
        }
        Tensor::from_vec(r, c, flat)
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| S::cast(rng.gen_range(lo..hi)))
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn array(&self) -> &Array2<S> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array2<S> {
        &mut self.data
    }

    pub fn view(&self) -> ArrayView2<'_, S> {
        self.data.view()
    }

    pub fn into_array(self) -> Array2<S> {
        self.data
    }

    pub fn as_slice(&self) -> &[S] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [S] {
        self.data.as_slice_mut().expect("standard layout")
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[(i, j)]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar tensor");
        self.data[(0, 0)]
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor::new(self.data.mapv(f))
    }

    /// Sum of squared entries.
    pub fn sq_norm(&self) -> S {
        self.as_slice().iter().map(|&x| x * x).sum()
    }

    /// Largest absolute entry, 0 for empty tensors.
    pub fn max_abs(&self) -> S {
        self.as_slice()
            .iter()
            .fold(S::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor::new(self.data.mapv(|x| x.as_f64()))
    }
}

impl<S: Scalar> From<Array2<S>> for Tensor<S> {
    fn from(data: Array2<S>) -> Self {
        Tensor::new(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_index() {
        let t = Tensor::from_rows(&[vec![1.0_f64, 2.0], vec![3.0, 4.0]]);
        assert_eq!(t.shape(), (2, 2));
        assert_eq!(t.get(1, 0), 3.0);
        assert_eq!(t.len(), 4);
    }

    #[test]
    #[should_panic(expected = "shape does not match")]
    fn bad_shape_rejected() {
        let _ = Tensor::<f32>::from_vec(2, 2, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn max_abs_and_norm() {
        let t = Tensor::from_rows(&[vec![3.0_f64, -4.0]]);
        assert_eq!(t.max_abs(), 4.0);
        assert_eq!(t.sq_norm(), 25.0);
    }
}
