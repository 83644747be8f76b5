//! Matrix-free Krylov solver and a damped Newton minimizer.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::operators::{materialize, LinearMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iter: 2000,
        }
    }
}

impl CgConfig {
    pub fn new(rel_tol: f64, max_iter: usize) -> Result<Self> {
        let cfg = Self { rel_tol, max_iter };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::invalid("cg config", "rel_tol must lie in (0, 1)"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("cg config", "max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Field,
    pub iterations: usize,
    /// Final `||op x - source|| / ||source||`.
    pub residual: f64,
    pub converged: bool,
    /// Relative residual after every iteration, starting with the initial one.
    pub residual_history: Vec<f64>,
}

/// Solves `op x = source` for symmetric positive definite `op`, starting
/// from zero, and always returns the last iterate.
///
/// The iteration is the conjugate-residual form of conjugate gradients: it
/// builds the same Krylov space but minimizes the residual norm over it, so
/// the residual never grows from one iteration to the next.
pub fn solve_spd(op: &dyn LinearMap, source: &Field, cfg: &CgConfig) -> Result<CgOutcome> {
    op.domain().ensure_eq(source.space())?;
    op.target().ensure_eq(source.space())?;
    let b_norm = source.norm();
    let mut x = Field::zeros(source.space().clone());
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            residual: 0.0,
            converged: true,
            residual_history: vec![0.0],
        });
    }
    let mut r = source.clone();
    let mut ar = op.apply(&r);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut r_ar = r.dot(&ar);
    let mut history = vec![1.0];
    let mut residual = 1.0;
    for it in 1..=cfg.max_iter {
        let ap_ap = ap.dot(&ap);
        if !(ap_ap > 0.0) || !(r_ar > 0.0) {
            // breakdown: the operator is not positive definite on the Krylov
            // space, or the residual is already exactly zero
            return Ok(CgOutcome {
                solution: x,
                iterations: it - 1,
                residual,
                converged: residual <= cfg.rel_tol,
                residual_history: history,
            });
        }
        let step = r_ar / ap_ap;
        x.axpy(step, &p);
        r.axpy(-step, &ap);
        residual = r.norm() / b_norm;
        if !residual.is_finite() {
            let (index, value) = x.first_non_finite().unwrap_or((0, residual));
            return Err(Error::NonFinite {
                context: "conjugate gradient",
                index,
                value,
            });
        }
        history.push(residual);
        if residual <= cfg.rel_tol {
            return Ok(CgOutcome {
                solution: x,
                iterations: it,
                residual,
                converged: true,
                residual_history: history,
            });
        }
        ar = op.apply(&r);
        let r_ar_new = r.dot(&ar);
        let beta = r_ar_new / r_ar;
        r_ar = r_ar_new;
        p = &r + &p.scaled(beta);
        ap = &ar + &ap.scaled(beta);
    }
    Ok(CgOutcome {
        solution: x,
        iterations: cfg.max_iter,
        residual,
        converged: false,
        residual_history: history,
    })
}

/// Like [`solve_spd`] but failing when the tolerance is not reached.
pub fn conjugate_gradient(op: &dyn LinearMap, source: &Field, cfg: &CgConfig) -> Result<Field> {
    let out = solve_spd(op, source, cfg)?;
    if out.converged {
        Ok(out.solution)
    } else {
        Err(Error::NotConverged {
            iterations: out.iterations,
            residual: out.residual,
        })
    }
}

/// Dense solve of `op x = source` on a real space through Cholesky, adding a
/// growing diagonal shift when the factorization fails.
pub fn dense_spd_solve(op: &dyn LinearMap, source: &Field) -> Result<Field> {
    op.domain().ensure_eq(source.space())?;
    let mut m = materialize(op)?;
    symmetrize(&mut m);
    let b = DVector::from_vec(source.real_values());
    let x = cholesky_solve_shifted(m, &b)?;
    Field::from_real(source.space().clone(), x.iter().copied().collect())
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub(crate) fn cholesky_solve_shifted(mut m: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut shift = 1e-12 * scale;
    for _ in 0..12 {
        if let Some(ch) = Cholesky::new(m.clone()) {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        shift *= 10.0;
    }
    Err(Error::invalid(
        "dense solve",
        "matrix is not positive definite even after diagonal shifting",
    ))
}

/// `ln det op` for symmetric positive definite `op` by stochastic Lanczos
/// quadrature: each probe `z` contributes `z^† ln(op) z` from a `steps`-long
/// Lanczos run, and the contributions are averaged. Probes must have unit
/// covariance under the space's inner product for the average to estimate
/// the trace.
pub fn log_det_estimate(op: &dyn LinearMap, probes: &[Field], steps: usize) -> Result<f64> {
    if probes.is_empty() || steps == 0 {
        return Err(Error::invalid("log det", "need at least one probe and one Lanczos step"));
    }
    let mut total = 0.0;
    for z in probes {
        op.domain().ensure_eq(z.space())?;
        total += lanczos_quadratic_log(op, z, steps)?;
    }
    Ok(total / probes.len() as f64)
}

fn lanczos_quadratic_log(op: &dyn LinearMap, z: &Field, steps: usize) -> Result<f64> {
    let norm = z.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut basis = vec![z.scaled(1.0 / norm)];
    let mut diag = Vec::with_capacity(steps);
    let mut off: Vec<f64> = Vec::with_capacity(steps);
    for j in 0..steps {
        let mut w = op.apply(&basis[j]);
        let a = basis[j].dot(&w);
        diag.push(a);
        // full reorthogonalization, twice, keeps the quadrature nodes clean
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&w);
                w.axpy(-c, q);
            }
        }
        let b = w.norm();
        if j + 1 == steps || b <= 1e-12 * a.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        off.push(b);
        basis.push(w.scaled(1.0 / b));
    }
    let m = diag.len();
    let t = DMatrix::from_fn(m, m, |i, k| {
        if i == k {
            diag[i]
        } else if i + 1 == k {
            off[i]
        } else if k + 1 == i {
            off[k]
        } else {
            0.0
        }
    });
    let eig = t.symmetric_eigen();
    let mut acc = 0.0;
    for (i, &theta) in eig.eigenvalues.iter().enumerate() {
        if !(theta > 0.0) {
            return Err(Error::invalid("log det", "operator is not positive definite"));
        }
        acc += eig.eigenvectors[(0, i)].powi(2) * theta.ln();
    }
    Ok(norm * norm * acc)
}

/// How Newton solves its curvature system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolve {
    /// Matrix-free; a non-converged solve still yields a usable direction.
    ConjugateGradient(CgConfig),
    /// Materialize and factorize; for small real spaces only.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub step_damping: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub line_search_shrink: f64,
    pub inner: InnerSolve,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            step_damping: 1.0,
            max_steps: 20,
            grad_tol: 1e-8,
            line_search_shrink: 0.5,
            inner: InnerSolve::ConjugateGradient(CgConfig {
                rel_tol: 1e-4,
                max_iter: 500,
            }),
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_damping > 0.0 && self.step_damping <= 1.0) {
            return Err(Error::invalid("newton config", "step_damping must lie in (0, 1]"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("newton config", "max_steps must be at least 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("newton config", "grad_tol must be positive"));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::invalid(
                "newton config",
                "line_search_shrink must lie in (0, 1)",
            ));
        }
        if let InnerSolve::ConjugateGradient(cg) = &self.inner {
            cg.validate()?;
        }
        Ok(())
    }
}

/// A smooth objective with a positive definite curvature approximation.
pub trait Objective {
    fn value(&self, x: &Field) -> Result<f64>;
    fn gradient(&self, x: &Field) -> Result<Field>;
    fn curvature<'a>(&'a self, x: &Field) -> Result<Box<dyn LinearMap + 'a>>;

    fn value_and_gradient(&self, x: &Field) -> Result<(f64, Field)> {
        Ok((self.value(x)?, self.gradient(x)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonRecord {
    pub step: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub lambda: f64,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub point: Field,
    pub value: f64,
    pub grad_norm: f64,
    pub steps: usize,
    pub converged: bool,
    pub records: Vec<NewtonRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum NewtonError {
    /// The line search could not decrease the objective; carries the last
    /// accepted state.
    #[error("line search stalled after {} steps (gradient norm {:.3e})", .0.steps, .0.grad_norm)]
    Stalled(Box<NewtonOutcome>),
    #[error(transparent)]
    Objective(#[from] Error),
}

const MIN_LAMBDA: f64 = 1e-8;

/// Damped Newton iteration `x <- x - lambda C(x)^{-1} g(x)` with
/// backtracking on `lambda` until the value does not increase.
pub fn relaxed_newton(
    objective: &dyn Objective,
    start: Field,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome, NewtonError> {
    cfg.validate()?;
    let mut x = start;
    let (mut value, mut grad) = objective.value_and_gradient(&x)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "newton start value",
            index: 0,
            value,
        }
        .into());
    }
    let mut grad_norm = grad.norm();
    let mut records = Vec::new();
    let mut steps = 0;
    while steps < cfg.max_steps && grad_norm > cfg.grad_tol {
        let (direction, inner_iterations) = {
            let curv = objective.curvature(&x)?;
            match &cfg.inner {
                InnerSolve::ConjugateGradient(cg) => {
                    let out = solve_spd(curv.as_ref(), &grad, cg)?;
                    (out.solution, out.iterations)
                }
                InnerSolve::Dense => (dense_spd_solve(curv.as_ref(), &grad)?, 1),
            }
        };
        let mut lambda = cfg.step_damping;
        let accepted = loop {
            let mut trial = x.clone();
            trial.axpy(-lambda, &direction);
            match objective.value(&trial) {
                Ok(v) if v.is_finite() && v <= value => break Some((trial, v)),
                Ok(_) | Err(Error::NonFinite { .. }) => {}
                Err(e) => return Err(e.into()),
            }
            lambda *= cfg.line_search_shrink;
            if lambda < MIN_LAMBDA {
                break None;
            }
        };
        let Some((trial, v)) = accepted else {
            return Err(NewtonError::Stalled(Box::new(NewtonOutcome {
                point: x,
                value,
                grad_norm,
                steps,
                converged: false,
                records,
            })));
        };
        steps += 1;
        x = trial;
        value = v;
        grad = objective.gradient(&x)?;
        grad_norm = grad.norm();
        log::trace!("newton step {steps}: value {value:.6e} |g| {grad_norm:.3e} lambda {lambda}");
        records.push(NewtonRecord {
            step: steps,
            value,
            grad_norm,
            lambda,
            inner_iterations,
        });
    }
    Ok(NewtonOutcome {
        point: x,
        value,
        grad_norm,
        steps,
        converged: grad_norm <= cfg.grad_tol,
        records,
    })
}
