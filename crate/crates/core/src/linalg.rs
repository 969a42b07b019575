//! Dense factorizations shared by the field sampler and the kriging solver.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Jitter multipliers applied to `tr(C)/n`.
pub const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

pub fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Lower Cholesky factor together with the absolute jitter that made it succeed.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub lower: DMatrix<f64>,
    pub jitter: f64,
}

/// Factor `C + jitter * I`, walking up [`JITTER_LADDER`] until the
/// factorization succeeds.
pub fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Result<JitteredCholesky> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(Error::Shape(format!(
            "covariance must be square and nonempty, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let scale = cov.trace() / n as f64;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "covariance trace must be positive and finite, got mean diagonal {scale}"
        )));
    }
    for &mult in JITTER_LADDER.iter() {
        let jitter = mult * scale;
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Ok(JitteredCholesky {
                lower: ch.unpack(),
                jitter,
            });
        }
    }
    Err(Error::Cholesky {
        smallest: JITTER_LADDER[0] * scale,
        largest: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
    })
}

/// Solve a square system by LU with partial pivoting.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn to_array1(v: &DVector<f64>) -> Array1<f64> {
    Array1::from_iter(v.iter().copied())
}
