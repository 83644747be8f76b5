//! Dense reference constructions for 1D grids, written from the DFT sums.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Raw forward transform `F[k, x] = dV exp(-2 pi i k x / n)`.
pub fn forward(n: usize, dv: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |k, x| {
        let ph = -2.0 * PI * (k * x) as f64 / n as f64;
        Complex64::new(ph.cos(), ph.sin()) * dv
    })
}

/// Raw adjoint transform `F^†[x, k] = dk exp(2 pi i k x / n)`.
pub fn backward(n: usize, dk: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |x, k| {
        let ph = 2.0 * PI * (k * x) as f64 / n as f64;
        Complex64::new(ph.cos(), ph.sin()) * dk
    })
}

/// Raw grid matrix of `F^† diag(h) F`; real for symmetric `h`.
pub fn harmonic_diagonal(n: usize, dv: f64, h: &[f64]) -> DMatrix<f64> {
    let dk = 1.0 / (n as f64 * dv);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        h.iter().map(|&v| Complex64::new(v, 0.0)),
    ));
    (backward(n, dk) * d * forward(n, dv)).map(|c| c.re)
}

/// Raw matrix of a 0/1 restriction.
pub fn mask(n: usize, kept: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(kept.len(), n);
    for (r, &c) in kept.iter().enumerate() {
        m[(r, c)] = 1.0;
    }
    m
}

/// Dense Wiener mean `(R^† N^{-1} R + S^{-1})^{-1} R^† N^{-1} d` in raw grid
/// coordinates, for a raw response matrix `r` and pixel volume `dv`.
pub fn wiener_mean(r: &DMatrix<f64>, noise_var: &[f64], d: &[f64], dv: f64, pix_power: &[f64]) -> DVector<f64> {
    let n = r.ncols();
    let w = DMatrix::from_diagonal(&DVector::from_iterator(noise_var.len(), noise_var.iter().map(|v| 1.0 / v)));
    let inv_p: Vec<f64> = pix_power.iter().map(|p| 1.0 / p).collect();
    let s_inv = harmonic_diagonal(n, dv, &inv_p);
    let lhs = r.transpose() * &w * r / dv + s_inv;
    let rhs = r.transpose() * &w * DVector::from_column_slice(d) / dv;
    lhs.lu().solve(&rhs).expect("invertible Wiener system")
}
