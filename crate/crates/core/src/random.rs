//! Gaussian matrix draws shared by the samplers.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

/// `rows × cols` matrix of i.i.d. standard normal entries, filled row by row.
pub fn gaussian_matrix<T: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<T> {
    let data: Vec<T> = (0..rows * cols)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}
