//! Signal-space critical filter: Wiener map `m` plus a log spectrum `tau`,
//! used as the baseline the excitation parametrization is compared against.
//!
//! The energy is
//! `1/2 r^† N^{-1} r + 1/2 sum_k n_k tau_k + 1/2 m^† S(tau)^{-1} m + 1/2 tau^T K tau`
//! with `r = d - R m` and `n_k` the number of modes in bin `k`.

use rand::Rng;

use super::Problem;
use crate::error::{Error, Result};
use crate::grid::{draw_white_excitation, Field, Space};
use crate::operators::{DenseMap, LinearMap, LogSpectrum};
use crate::solvers::{relaxed_newton, solve_spd, CgConfig, InnerSolve, NewtonConfig, NewtonError, Objective};

/// Per-bin `sum_{kappa in k} dk |F m|^2`.
pub fn power_statistic(problem: &Problem, m: &Field) -> Result<Vec<f64>> {
    problem.grid_space().ensure_eq(m.space())?;
    let h = problem.transform().forward_unchecked(m);
    let dk = problem.harmonic_space().weight();
    let per_pixel: Vec<f64> = h.values().iter().map(|v| dk * v.norm_sqr()).collect();
    Ok(problem.binning().bin_sum(&per_pixel))
}

fn mode_counts(problem: &Problem) -> Vec<f64> {
    problem.binning().mode_counts().iter().map(|&c| c as f64).collect()
}

fn check_tau(problem: &Problem, tau: &[f64]) -> Result<()> {
    if tau.len() != problem.binning().len() {
        return Err(Error::SpaceMismatch {
            expected: problem.binning().bin_space().to_string(),
            found: format!("{} spectral values", tau.len()),
        });
    }
    Ok(())
}

/// Legacy energy of a signal-space map at log spectrum `tau` (linear response).
pub fn legacy_energy(problem: &Problem, m: &Field, tau: &[f64]) -> Result<f64> {
    check_tau(problem, tau)?;
    let t = power_statistic(problem, m)?;
    let r = problem.setup().response().apply(m);
    let inv = problem.setup().noise().inverse_variances();
    let lik: f64 = problem
        .data()
        .values()
        .iter()
        .zip(r.values())
        .zip(&inv)
        .map(|((d, r), w)| (d.re - r.re).powi(2) * w)
        .sum();
    let n = mode_counts(problem);
    let prior: f64 = (0..tau.len())
        .map(|k| n[k] * tau[k] + t[k] * (-tau[k]).exp())
        .sum();
    Ok(0.5 * lik + 0.5 * prior + 0.5 * problem.smoothness().quadratic(tau))
}

/// `-1/2 T e^{-tau} + n/2 + K tau` for a per-bin power statistic `T`.
pub fn cf_residual(problem: &Problem, total_power: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
    check_tau(problem, tau)?;
    check_tau(problem, total_power)?;
    let n = mode_counts(problem);
    let k = problem.smoothness().apply_slice(tau);
    Ok((0..tau.len())
        .map(|i| -0.5 * total_power[i] * (-tau[i]).exp() + 0.5 * n[i] + k[i])
        .collect())
}

/// Derivative of [`legacy_energy`] with respect to `tau` at fixed `m`.
pub fn legacy_tau_gradient(problem: &Problem, m: &Field, tau: &[f64]) -> Result<Vec<f64>> {
    cf_residual(problem, &power_statistic(problem, m)?, tau)
}

/// Hutchinson estimate of `Tr_k[F D F^†]` per bin, `D` the Wiener covariance
/// at `spectrum`, using the excitation curvature at `t` (linear problems
/// only, where it does not depend on `t`).
pub fn estimate_uncertainty_power<R: Rng + ?Sized>(
    problem: &Problem,
    t: &Field,
    spectrum: &LogSpectrum,
    probes: usize,
    cg: &CgConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if probes == 0 {
        return Err(Error::invalid("uncertainty probes", "need at least one probe"));
    }
    let curv = problem.excitation_curvature(t, spectrum)?;
    let h = match problem.harmonic_space() {
        Space::Harmonic(h) => h.clone(),
        _ => unreachable!("transforms always target a harmonic space"),
    };
    let dk = h.cell_volume();
    let mut acc = vec![0.0; problem.binning().len()];
    for _ in 0..probes {
        let z = draw_white_excitation(&h, rng);
        let out = solve_spd(&curv, &z, cg)?;
        if !out.converged {
            return Err(Error::NotConverged {
                iterations: out.iterations,
                residual: out.residual,
            });
        }
        let per_pixel: Vec<f64> = z
            .values()
            .iter()
            .zip(out.solution.values())
            .map(|(a, b)| dk * (a.conj() * b).re)
            .collect();
        for (a, v) in acc.iter_mut().zip(problem.binning().bin_sum(&per_pixel)) {
            *a += v;
        }
    }
    let power = spectrum.power();
    Ok(acc
        .iter()
        .zip(&power)
        .map(|(a, p)| p * a / probes as f64)
        .collect())
}

/// `G(tau) = 1/2 sum T e^{-tau} + 1/2 sum n tau + 1/2 tau^T K tau`, whose
/// stationary point is the critical-filter spectrum for power statistic `T`.
struct CfObjective<'a> {
    problem: &'a Problem,
    total_power: &'a [f64],
}

impl Objective for CfObjective<'_> {
    fn value(&self, x: &Field) -> Result<f64> {
        let tau = x.real_values();
        let n = mode_counts(self.problem);
        let v: f64 = (0..tau.len())
            .map(|k| self.total_power[k] * (-tau[k]).exp() + n[k] * tau[k])
            .sum();
        Ok(0.5 * v + 0.5 * self.problem.smoothness().quadratic(&tau))
    }

    fn gradient(&self, x: &Field) -> Result<Field> {
        let g = cf_residual(self.problem, self.total_power, &x.real_values())?;
        Ok(Field::real_unchecked(x.space().clone(), g))
    }

    fn curvature<'b>(&'b self, x: &Field) -> Result<Box<dyn LinearMap + 'b>> {
        let tau = x.real_values();
        let mut m = self.problem.smoothness().matrix().clone();
        for k in 0..tau.len() {
            m[(k, k)] += 0.5 * self.total_power[k] * (-tau[k]).exp();
        }
        Ok(Box::new(DenseMap::new(x.space().clone(), x.space().clone(), m)?))
    }
}

/// Solves the critical-filter condition for `tau`, starting at `tau0`.
pub fn solve_cf_update(problem: &Problem, total_power: &[f64], tau0: &[f64]) -> Result<Vec<f64>> {
    check_tau(problem, total_power)?;
    check_tau(problem, tau0)?;
    if total_power.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("critical filter update", "bin powers must be positive"));
    }
    let obj = CfObjective {
        problem,
        total_power,
    };
    let cfg = NewtonConfig {
        max_steps: 100,
        grad_tol: 1e-10,
        inner: InnerSolve::Dense,
        ..NewtonConfig::default()
    };
    let scale = 1.0 + problem.binning().mode_counts().iter().sum::<usize>() as f64;
    let start = Field::real_unchecked(problem.binning().bin_space(), tau0.iter().copied());
    match relaxed_newton(&obj, start, &cfg) {
        Ok(out) => Ok(out.point.real_values()),
        // line search hitting the rounding floor next to the optimum
        Err(NewtonError::Stalled(out)) if out.grad_norm < 1e-6 * scale => Ok(out.point.real_values()),
        Err(NewtonError::Stalled(out)) => Err(Error::NotConverged {
            iterations: out.steps,
            residual: out.grad_norm,
        }),
        Err(NewtonError::Objective(e)) => Err(e),
    }
}
