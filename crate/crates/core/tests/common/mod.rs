//! Helpers shared by the integration tests: synthetic problems built through
//! the public API and dense 1D reference matrices.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ncf_core::grid::{draw_white_excitation, Field, GridSpace, HarmonicTransform};
use ncf_core::model::{MeasurementSetup, NoiseModel, Problem};
use ncf_core::nonlinearity::LocalFunction;
use ncf_core::operators::{AmplitudeOperator, LinearMap, LogSpectrum, PowerBinning, SmoothnessPrior};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Synthetic {
    pub problem: Problem,
    /// The true signal on the grid.
    pub signal: Field,
}

/// Draws a signal with per-mode power `p(|k|)`, measures `f(s)` through
/// `response` with noise, and builds a problem on `binning`.
pub fn synthesize(
    grid: &GridSpace,
    binning: PowerBinning,
    p: impl Fn(f64) -> f64,
    response: Arc<dyn LinearMap>,
    f: LocalFunction,
    noise_var: f64,
    seed: u64,
) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal = draw_signal(grid, p, &mut rng);
    let m = response.target().size();
    let setup = MeasurementSetup::new(response, f, NoiseModel::Fixed(vec![noise_var; m])).unwrap();
    let data = setup.observe(&signal, &mut rng).unwrap();
    Synthetic {
        problem: assemble(grid, binning, setup, data),
        signal,
    }
}

/// A signal with per-mode power `p(|k|)`.
pub fn draw_signal(grid: &GridSpace, p: impl Fn(f64) -> f64, rng: &mut ChaCha8Rng) -> Field {
    let ft = Arc::new(HarmonicTransform::new(grid));
    let truth_binning = PowerBinning::natural(&grid.harmonic()).unwrap();
    let truth = LogSpectrum::from_fn(&truth_binning, p).unwrap();
    let xi = draw_white_excitation(&grid.harmonic(), rng);
    AmplitudeOperator::new(&truth, &truth_binning, ft).unwrap().apply(&xi)
}

/// Problem on `binning` with a unit smoothness prior.
pub fn assemble(grid: &GridSpace, binning: PowerBinning, setup: MeasurementSetup, data: Field) -> Problem {
    let ft = Arc::new(HarmonicTransform::new(grid));
    let binning = Arc::new(binning);
    let smooth = Arc::new(SmoothnessPrior::new(&binning, 1.0).unwrap());
    Problem::new(ft, binning, smooth, setup, data).unwrap()
}

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

/// Raw grid matrix of `F^† diag(h) F`.
pub fn harmonic_diagonal(n: usize, dv: f64, h: &[f64]) -> DMatrix<f64> {
    let dk = 1.0 / (n as f64 * dv);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(n, h.iter().map(|&v| Complex64::new(v, 0.0))));
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

/// Dense Wiener covariance `(R^T W R + S^{-1})^{-1}` in raw grid coordinates.
pub fn wiener_covariance(r: &DMatrix<f64>, noise_var: &[f64], dv: f64, pix_power: &[f64]) -> DMatrix<f64> {
    wiener_precision(r, noise_var, dv, pix_power).try_inverse().expect("invertible Wiener precision") / dv
}

/// Dense Wiener mean in raw grid coordinates.
pub fn wiener_mean(r: &DMatrix<f64>, noise_var: &[f64], d: &[f64], dv: f64, pix_power: &[f64]) -> DVector<f64> {
    let w = noise_weights(noise_var);
    let rhs = r.transpose() * &w * DVector::from_column_slice(d) / dv;
    wiener_precision(r, noise_var, dv, pix_power).lu().solve(&rhs).expect("invertible Wiener system")
}

fn noise_weights(noise_var: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(noise_var.len(), noise_var.iter().map(|v| 1.0 / v)))
}

/// `D^{-1} / dV` as a raw matrix.
fn wiener_precision(r: &DMatrix<f64>, noise_var: &[f64], dv: f64, pix_power: &[f64]) -> DMatrix<f64> {
    let inv_p: Vec<f64> = pix_power.iter().map(|p| 1.0 / p).collect();
    r.transpose() * noise_weights(noise_var) * r / dv + harmonic_diagonal(r.ncols(), dv, &inv_p)
}
