//! Energies, gradients and curvatures of the reconstruction problem.
//!
//! The data model is `d = R f(A xi) + n` with white `xi`, Gaussian noise of
//! covariance `N`, and a log amplitude spectrum `alpha` under a smoothness
//! prior `(1/sigma^2) Delta^† Delta` on `tau = 2 alpha`.

pub mod legacy;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{Field, HarmonicTransform, Space};
use crate::nonlinearity::LocalFunction;
use crate::operators::{expect_space, AmplitudeOperator, LinearMap, LogSpectrum, PowerBinning, SmoothnessPrior};
use crate::solvers::Objective;

/// Log-variance noise model `N = diag(exp(eta))` under an inverse-gamma prior
/// with shape `beta` and scale `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatedNoise {
    pub eta: Vec<f64>,
    pub beta: f64,
    pub q: f64,
}

impl EstimatedNoise {
    pub fn new(eta: Vec<f64>, beta: f64, q: f64) -> Result<Self> {
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(Error::invalid("noise prior", "beta must exceed 1"));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::invalid("noise prior", "q must be positive"));
        }
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("noise prior", "eta must be finite"));
        }
        Ok(Self { eta, beta, q })
    }

    /// The eta-dependent KL terms given the sample-mean squared residuals.
    pub fn energy(&self, mean_sq_residual: &[f64]) -> f64 {
        self.eta
            .iter()
            .zip(mean_sq_residual)
            .map(|(&e, &r2)| (0.5 * r2 + self.q) * (-e).exp() + (self.beta - 0.5) * e)
            .sum()
    }

    /// Derivative of [`EstimatedNoise::energy`] per datum.
    pub fn gradient(&self, mean_sq_residual: &[f64]) -> Vec<f64> {
        self.eta
            .iter()
            .zip(mean_sq_residual)
            .map(|(&e, &r2)| 0.5 + (self.beta - 1.0) - (0.5 * r2 + self.q) * (-e).exp())
            .collect()
    }

    /// Minimizer of the energy per datum, `exp(eta) = (r^2/2 + q) / (beta - 1/2)`.
    pub fn closed_form(&self, mean_sq_residual: &[f64]) -> Vec<f64> {
        mean_sq_residual
            .iter()
            .map(|&r2| ((0.5 * r2 + self.q) / (self.beta - 0.5)).ln())
            .collect()
    }

    /// Damped scalar Newton per datum, started from the current `eta`.
    pub fn newton_update(&self, mean_sq_residual: &[f64]) -> Vec<f64> {
        let c = self.beta - 0.5;
        self.eta
            .iter()
            .zip(mean_sq_residual)
            .map(|(&start, &r2)| {
                let b = 0.5 * r2 + self.q;
                let mut e = start;
                for _ in 0..200 {
                    let curv = b * (-e).exp();
                    let grad = c - curv;
                    let step = (grad / curv).clamp(-1.0, 1.0);
                    e -= step;
                    if step.abs() < 1e-14 * e.abs().max(1.0) {
                        break;
                    }
                }
                e
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    /// Known per-datum variances.
    Fixed(Vec<f64>),
    Estimated(EstimatedNoise),
}

impl NoiseModel {
    pub fn len(&self) -> usize {
        match self {
            NoiseModel::Fixed(v) => v.len(),
            NoiseModel::Estimated(e) => e.eta.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn variances(&self) -> Vec<f64> {
        match self {
            NoiseModel::Fixed(v) => v.clone(),
            NoiseModel::Estimated(e) => e.eta.iter().map(|x| x.exp()).collect(),
        }
    }

    pub fn inverse_variances(&self) -> Vec<f64> {
        match self {
            NoiseModel::Fixed(v) => v.iter().map(|x| 1.0 / x).collect(),
            NoiseModel::Estimated(e) => e.eta.iter().map(|x| (-x).exp()).collect(),
        }
    }

    pub fn estimated(&self) -> Option<&EstimatedNoise> {
        match self {
            NoiseModel::Estimated(e) => Some(e),
            NoiseModel::Fixed(_) => None,
        }
    }
}

/// Instrument, nonlinearity and noise.
#[derive(Clone)]
pub struct MeasurementSetup {
    response: Arc<dyn LinearMap>,
    nonlinearity: LocalFunction,
    noise: NoiseModel,
}

impl std::fmt::Debug for MeasurementSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeasurementSetup")
            .field("response", &format_args!("{} -> {}", self.response.domain(), self.response.target()))
            .field("nonlinearity", &self.nonlinearity)
            .field("noise", &self.noise)
            .finish()
    }
}

impl MeasurementSetup {
    pub fn new(
        response: Arc<dyn LinearMap>,
        nonlinearity: LocalFunction,
        noise: NoiseModel,
    ) -> Result<Self> {
        if !matches!(response.domain(), Space::Grid(_)) {
            return Err(Error::invalid("measurement setup", "response must act on a grid"));
        }
        if !matches!(response.target(), Space::Data(_)) {
            return Err(Error::invalid("measurement setup", "response must map into data"));
        }
        if noise.len() != response.target().size() {
            return Err(Error::invalid(
                "measurement setup",
                format!(
                    "{} noise entries for {} data points",
                    noise.len(),
                    response.target().size()
                ),
            ));
        }
        if let NoiseModel::Fixed(v) = &noise {
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::invalid("measurement setup", "noise variances must be positive"));
            }
        }
        Ok(Self {
            response,
            nonlinearity,
            noise,
        })
    }

    pub fn response(&self) -> &Arc<dyn LinearMap> {
        &self.response
    }

    pub fn nonlinearity(&self) -> &LocalFunction {
        &self.nonlinearity
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// `d = R f(s) + n` with `n` drawn from the noise model.
    pub fn observe<R: Rng + ?Sized>(&self, signal: &Field, rng: &mut R) -> Result<Field> {
        self.response.domain().ensure_eq(signal.space())?;
        let clean = self.response.apply(&self.nonlinearity.apply(signal));
        let sd: Vec<f64> = self.noise.variances().iter().map(|v| v.sqrt()).collect();
        let noisy = clean
            .values()
            .iter()
            .zip(&sd)
            .map(|(v, s)| v.re + s * rng.sample::<f64, _>(StandardNormal));
        Ok(Field::real_unchecked(clean.space().clone(), noisy))
    }
}

/// Excitation mean, spectrum and (optionally) noise log-variances.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorState {
    pub t: Field,
    pub spectrum: LogSpectrum,
    pub eta: Option<Vec<f64>>,
}

impl PosteriorState {
    /// The excitation curvature at this state.
    pub fn curvature(&self, problem: &Problem) -> Result<ExcitationCurvature> {
        problem.excitation_curvature(&self.t, &self.spectrum)
    }
}

/// Posterior excitation samples sharing one harmonic space.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    samples: Vec<Field>,
}

impl SampleSet {
    pub fn new(samples: Vec<Field>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptySampleSet)?;
        if !first.space().is_harmonic() {
            return Err(Error::invalid("sample set", "samples must be harmonic excitations"));
        }
        for s in &samples[1..] {
            first.space().ensure_eq(s.space())?;
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Field] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Field> {
        self.samples.iter()
    }

    pub fn into_samples(self) -> Vec<Field> {
        self.samples
    }
}

/// Everything the energies need: geometry, prior, instrument and data.
#[derive(Clone)]
pub struct Problem {
    transform: Arc<HarmonicTransform>,
    binning: Arc<PowerBinning>,
    smoothness: Arc<SmoothnessPrior>,
    setup: MeasurementSetup,
    data: Field,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("grid", self.transform.grid_space())
            .field("bins", &self.binning.len())
            .field("setup", &self.setup)
            .finish()
    }
}

/// Derivative and residual for one excitation.
pub(crate) struct Evaluation {
    pub fprime: Vec<f64>,
    pub residual: Vec<f64>,
}

impl Problem {
    pub fn new(
        transform: Arc<HarmonicTransform>,
        binning: Arc<PowerBinning>,
        smoothness: Arc<SmoothnessPrior>,
        setup: MeasurementSetup,
        data: Field,
    ) -> Result<Self> {
        if binning.harmonic() != transform.harmonic() {
            return Err(Error::invalid("problem", "binning does not match the grid"));
        }
        if smoothness.domain() != &binning.bin_space() {
            return Err(Error::invalid("problem", "smoothness prior does not match the binning"));
        }
        transform.grid_space().ensure_eq(setup.response.domain())?;
        setup.response.target().ensure_eq(data.space())?;
        if let Some((index, value)) = data.first_non_finite() {
            return Err(Error::NonFinite {
                context: "data",
                index,
                value,
            });
        }
        Ok(Self {
            transform,
            binning,
            smoothness,
            setup,
            data,
        })
    }

    pub fn transform(&self) -> &Arc<HarmonicTransform> {
        &self.transform
    }

    pub fn binning(&self) -> &Arc<PowerBinning> {
        &self.binning
    }

    pub fn smoothness(&self) -> &Arc<SmoothnessPrior> {
        &self.smoothness
    }

    pub fn setup(&self) -> &MeasurementSetup {
        &self.setup
    }

    pub fn data(&self) -> &Field {
        &self.data
    }

    pub fn harmonic_space(&self) -> &Space {
        self.transform.harmonic_space()
    }

    pub fn grid_space(&self) -> &Space {
        self.transform.grid_space()
    }

    /// The same problem under a smoothness prior of strength `sigma`.
    pub fn with_sigma(&self, sigma: f64) -> Result<Problem> {
        let mut out = self.clone();
        if sigma != self.smoothness.sigma() {
            out.smoothness = Arc::new(SmoothnessPrior::new(&self.binning, sigma)?);
        }
        Ok(out)
    }

    /// The same problem under a different noise model.
    pub fn with_noise(&self, noise: NoiseModel) -> Result<Problem> {
        let setup = MeasurementSetup::new(self.setup.response.clone(), self.setup.nonlinearity.clone(), noise)?;
        let mut out = self.clone();
        out.setup = setup;
        Ok(out)
    }

    /// Replaces the noise log-variances of an estimated noise model.
    pub fn set_eta(&mut self, eta: Vec<f64>) -> Result<()> {
        match &mut self.setup.noise {
            NoiseModel::Estimated(n) => {
                if eta.len() != n.eta.len() {
                    return Err(Error::invalid("noise", "eta length changed"));
                }
                n.eta = eta;
                Ok(())
            }
            NoiseModel::Fixed(_) => Err(Error::FixedNoise),
        }
    }

    pub fn amplitude(&self, spectrum: &LogSpectrum) -> Result<AmplitudeOperator> {
        AmplitudeOperator::new(spectrum, &self.binning, self.transform.clone())
    }

    pub(crate) fn evaluate(&self, amp: &AmplitudeOperator, xi: &Field) -> Result<Evaluation> {
        self.harmonic_space().ensure_eq(xi.space())?;
        let signal = amp.apply(xi);
        let f = &self.setup.nonlinearity;
        let mut fs = Vec::with_capacity(signal.len());
        let mut fprime = Vec::with_capacity(signal.len());
        for (i, v) in signal.values().iter().enumerate() {
            let y = f.eval(v.re);
            let dy = f.deriv(v.re);
            if !y.is_finite() || !dy.is_finite() {
                return Err(Error::NonFinite {
                    context: "f(A xi)",
                    index: i,
                    value: if y.is_finite() { dy } else { y },
                });
            }
            fs.push(y);
            fprime.push(dy);
        }
        let response = self
            .setup
            .response
            .apply(&Field::real_unchecked(signal.space().clone(), fs));
        let residual = self
            .data
            .values()
            .iter()
            .zip(response.values())
            .map(|(d, r)| d.re - r.re)
            .collect();
        Ok(Evaluation {
            fprime,
            residual,
        })
    }

    fn likelihood(&self, residual: &[f64], inv: &[f64]) -> f64 {
        0.5 * residual.iter().zip(inv).map(|(r, w)| r * r * w).sum::<f64>()
    }

    /// Terms that depend only on `eta`: `(beta - 1/2) eta + q exp(-eta)`.
    fn noise_prior_energy(&self) -> f64 {
        match &self.setup.noise {
            NoiseModel::Estimated(n) => n
                .eta
                .iter()
                .map(|&e| (n.beta - 0.5) * e + n.q * (-e).exp())
                .sum(),
            NoiseModel::Fixed(_) => 0.0,
        }
    }

    /// `A^† f'(s) R^† y` for a data-space vector `y`.
    fn pull_back_excitation(&self, amp: &AmplitudeOperator, fprime: &[f64], y: Vec<f64>) -> Field {
        let back = self
            .setup
            .response
            .adjoint(&Field::real_unchecked(self.setup.response.target().clone(), y));
        amp.adjoint(&back.weighted(fprime))
    }

    /// Information Hamiltonian of the excitation at a fixed spectrum.
    pub fn hamiltonian_value(&self, xi: &Field, spectrum: &LogSpectrum) -> Result<f64> {
        let amp = self.amplitude(spectrum)?;
        self.hamiltonian_with(&amp, xi)
    }

    pub(crate) fn hamiltonian_with(&self, amp: &AmplitudeOperator, xi: &Field) -> Result<f64> {
        let ev = self.evaluate(amp, xi)?;
        let inv = self.setup.noise.inverse_variances();
        Ok(self.likelihood(&ev.residual, &inv) + 0.5 * xi.dot(xi) + self.noise_prior_energy())
    }

    pub fn hamiltonian_gradient_excitation(&self, xi: &Field, spectrum: &LogSpectrum) -> Result<Field> {
        let amp = self.amplitude(spectrum)?;
        Ok(self.hamiltonian_value_and_gradient_with(&amp, xi)?.1)
    }

    pub(crate) fn hamiltonian_value_and_gradient_with(
        &self,
        amp: &AmplitudeOperator,
        xi: &Field,
    ) -> Result<(f64, Field)> {
        let ev = self.evaluate(amp, xi)?;
        let inv = self.setup.noise.inverse_variances();
        let value = self.likelihood(&ev.residual, &inv) + 0.5 * xi.dot(xi) + self.noise_prior_energy();
        let weighted: Vec<f64> = ev.residual.iter().zip(&inv).map(|(r, w)| r * w).collect();
        let mut grad = self.pull_back_excitation(amp, &ev.fprime, weighted);
        grad = grad.scaled(-1.0);
        grad.axpy(1.0, xi);
        Ok((value, grad))
    }

    /// `Xi^{-1} = R*^† N^{-1} R* + 1` at expansion point `t`.
    pub fn excitation_curvature(&self, t: &Field, spectrum: &LogSpectrum) -> Result<ExcitationCurvature> {
        let amp = self.amplitude(spectrum)?;
        self.excitation_curvature_with(amp, t)
    }

    pub(crate) fn excitation_curvature_with(
        &self,
        amp: AmplitudeOperator,
        t: &Field,
    ) -> Result<ExcitationCurvature> {
        let response = LinearizedResponse::new(amp, self.setup.clone(), t)?;
        Ok(ExcitationCurvature {
            noise_inverse: self.setup.noise.inverse_variances(),
            response,
        })
    }

    /// Sample-mean squared residual per datum.
    pub fn mean_squared_residual(&self, samples: &SampleSet, spectrum: &LogSpectrum) -> Result<Vec<f64>> {
        let amp = self.amplitude(spectrum)?;
        let mut acc = vec![0.0; self.data.len()];
        for xi in samples.iter() {
            let ev = self.evaluate(&amp, xi)?;
            for (a, r) in acc.iter_mut().zip(&ev.residual) {
                *a += r * r;
            }
        }
        let n = samples.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Sampled KL estimate without the entropy term.
    pub fn kl_estimate(&self, samples: &SampleSet, spectrum: &LogSpectrum) -> Result<f64> {
        let amp = self.amplitude(spectrum)?;
        let inv = self.setup.noise.inverse_variances();
        let mut lik = 0.0;
        for xi in samples.iter() {
            lik += self.likelihood(&self.evaluate(&amp, xi)?.residual, &inv);
        }
        lik /= samples.len() as f64;
        Ok(lik + self.smoothness_energy(spectrum) + self.noise_prior_energy())
    }

    /// `2 alpha^T K alpha`, i.e. `1/2 tau^T K tau`.
    pub fn smoothness_energy(&self, spectrum: &LogSpectrum) -> f64 {
        2.0 * self.smoothness.quadratic(spectrum.alpha())
    }

    /// `J^T y` for the Jacobian of `R f(A xi)` with respect to `alpha`.
    fn pull_back_amplitude(&self, amp: &AmplitudeOperator, xi: &Field, fprime: &[f64], y: Vec<f64>) -> Vec<f64> {
        let back = self
            .setup
            .response
            .adjoint(&Field::real_unchecked(self.setup.response.target().clone(), y));
        let g = self.transform.forward_unchecked(&back.weighted(fprime));
        let dk = self.harmonic_space().weight();
        let per_pixel: Vec<f64> = g
            .values()
            .iter()
            .zip(xi.values())
            .zip(amp.pixel_amplitudes())
            .map(|((gv, x), a)| dk * a * (gv.conj() * x).re)
            .collect();
        self.binning.bin_sum(&per_pixel)
    }

    pub fn kl_gradient_amplitude(&self, samples: &SampleSet, spectrum: &LogSpectrum) -> Result<Field> {
        let amp = self.amplitude(spectrum)?;
        let inv = self.setup.noise.inverse_variances();
        let mut grad = vec![0.0; self.binning.len()];
        for xi in samples.iter() {
            let ev = self.evaluate(&amp, xi)?;
            let y = ev.residual.iter().zip(&inv).map(|(r, w)| r * w).collect();
            for (g, v) in grad.iter_mut().zip(self.pull_back_amplitude(&amp, xi, &ev.fprime, y)) {
                *g -= v;
            }
        }
        let n = samples.len() as f64;
        let smooth = self.smoothness.apply_slice(spectrum.alpha());
        Ok(Field::real_unchecked(
            self.binning.bin_space(),
            grad.iter().zip(&smooth).map(|(g, k)| g / n + 4.0 * k),
        ))
    }

    pub fn kl_curvature_amplitude(&self, samples: &SampleSet, spectrum: &LogSpectrum) -> Result<AmplitudeCurvature<'_>> {
        let amp = self.amplitude(spectrum)?;
        let mut per_sample = Vec::with_capacity(samples.len());
        for xi in samples.iter() {
            let ev = self.evaluate(&amp, xi)?;
            per_sample.push((xi.clone(), ev.fprime));
        }
        let mut curv = AmplitudeCurvature {
            problem: self,
            space: self.binning.bin_space(),
            noise_inverse: self.setup.noise.inverse_variances(),
            amplitude: amp,
            per_sample,
            epsilon: 0.0,
        };
        // regularize against the semidefinite smoothness kernel, scaled by
        // a one-probe estimate of the largest diagonal entry
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let probe: Vec<f64> = (0..self.binning.len())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let gram = curv.gram_apply(&probe);
        let k = self.smoothness.matrix();
        let max_diag = (0..probe.len())
            .map(|i| probe[i] * gram[i] + 4.0 * k[(i, i)])
            .fold(0.0f64, f64::max);
        curv.epsilon = 1e-8 * max_diag.max(f64::MIN_POSITIVE);
        Ok(curv)
    }

    /// Gradient of the KL with respect to the noise log-variances.
    pub fn kl_gradient_noise(&self, samples: &SampleSet, spectrum: &LogSpectrum) -> Result<Field> {
        let noise = self.setup.noise.estimated().ok_or(Error::FixedNoise)?;
        let r2 = self.mean_squared_residual(samples, spectrum)?;
        Ok(Field::real_unchecked(
            self.data.space().clone(),
            noise.gradient(&r2),
        ))
    }

    /// New `eta` minimizing the KL for the given samples.
    pub fn updated_eta(&self, samples: &SampleSet, spectrum: &LogSpectrum) -> Result<Vec<f64>> {
        let noise = self.setup.noise.estimated().ok_or(Error::FixedNoise)?;
        let r2 = self.mean_squared_residual(samples, spectrum)?;
        Ok(noise.newton_update(&r2))
    }
}

/// `R* = R f'(A t) A`, the response linearized around `t`.
#[derive(Clone)]
pub struct LinearizedResponse {
    amplitude: AmplitudeOperator,
    setup: MeasurementSetup,
    fprime: Vec<f64>,
}

impl LinearizedResponse {
    pub fn new(amplitude: AmplitudeOperator, setup: MeasurementSetup, t: &Field) -> Result<Self> {
        amplitude.domain().ensure_eq(t.space())?;
        let s = amplitude.apply(t);
        let fprime = s.values().iter().map(|v| setup.nonlinearity.deriv(v.re)).collect::<Vec<_>>();
        if let Some(i) = fprime.iter().position(|v: &f64| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "f'(A t)",
                index: i,
                value: s.values()[i].re,
            });
        }
        Ok(Self {
            amplitude,
            setup,
            fprime,
        })
    }

    pub fn amplitude(&self) -> &AmplitudeOperator {
        &self.amplitude
    }

    pub fn setup(&self) -> &MeasurementSetup {
        &self.setup
    }
}

impl LinearMap for LinearizedResponse {
    fn domain(&self) -> &Space {
        self.amplitude.domain()
    }
    fn target(&self) -> &Space {
        self.setup.response.target()
    }
    fn apply(&self, x: &Field) -> Field {
        self.setup
            .response
            .apply(&self.amplitude.apply(x).weighted(&self.fprime))
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.amplitude
            .adjoint(&self.setup.response.adjoint(y).weighted(&self.fprime))
    }
}

/// `Xi^{-1} = R*^† N^{-1} R* + 1` on the harmonic space.
#[derive(Clone)]
pub struct ExcitationCurvature {
    response: LinearizedResponse,
    noise_inverse: Vec<f64>,
}

impl ExcitationCurvature {
    pub fn response(&self) -> &LinearizedResponse {
        &self.response
    }

    pub fn noise_inverse(&self) -> &[f64] {
        &self.noise_inverse
    }
}

impl LinearMap for ExcitationCurvature {
    fn domain(&self) -> &Space {
        self.response.domain()
    }
    fn target(&self) -> &Space {
        self.response.domain()
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(self.domain(), x, "excitation curvature");
        let y = self.response.apply(x).weighted(&self.noise_inverse);
        &self.response.adjoint(&y) + x
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.apply(y)
    }
}

/// Sampled Gauss-Newton curvature of the KL with respect to `alpha`, plus
/// `4K` and a small multiple of the identity.
pub struct AmplitudeCurvature<'a> {
    problem: &'a Problem,
    space: Space,
    noise_inverse: Vec<f64>,
    amplitude: AmplitudeOperator,
    per_sample: Vec<(Field, Vec<f64>)>,
    epsilon: f64,
}

impl AmplitudeCurvature<'_> {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Sample mean of `J^T N^{-1} J v`.
    fn gram_apply(&self, v: &[f64]) -> Vec<f64> {
        let p = self.problem;
        let pix = p.binning.broadcast(v);
        let mut acc = vec![0.0; v.len()];
        for (xi, fprime) in &self.per_sample {
            let h = xi.weighted(&pix);
            let ds = self.amplitude.apply(&h);
            let y: Vec<f64> = p
                .setup
                .response
                .apply(&ds.weighted(fprime))
                .values()
                .iter()
                .zip(&self.noise_inverse)
                .map(|(a, w)| a.re * w)
                .collect();
            for (a, b) in acc.iter_mut().zip(p.pull_back_amplitude(&self.amplitude, xi, fprime, y)) {
                *a += b;
            }
        }
        let n = self.per_sample.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

impl LinearMap for AmplitudeCurvature<'_> {
    fn domain(&self) -> &Space {
        &self.space
    }
    fn target(&self) -> &Space {
        &self.space
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(&self.space, x, "amplitude curvature");
        let v = x.real_values();
        let gram = self.gram_apply(&v);
        let smooth = self.problem.smoothness.apply_slice(&v);
        Field::real_unchecked(
            self.space.clone(),
            (0..v.len()).map(|i| gram[i] + 4.0 * smooth[i] + self.epsilon * v[i]),
        )
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.apply(y)
    }
}

/// Newton objective over the excitation at a fixed spectrum.
pub struct ExcitationObjective<'a> {
    problem: &'a Problem,
    amplitude: AmplitudeOperator,
}

impl<'a> ExcitationObjective<'a> {
    pub fn new(problem: &'a Problem, spectrum: &LogSpectrum) -> Result<Self> {
        Ok(Self {
            amplitude: problem.amplitude(spectrum)?,
            problem,
        })
    }
}

impl Objective for ExcitationObjective<'_> {
    fn value(&self, x: &Field) -> Result<f64> {
        self.problem.hamiltonian_with(&self.amplitude, x)
    }
    fn gradient(&self, x: &Field) -> Result<Field> {
        Ok(self.problem.hamiltonian_value_and_gradient_with(&self.amplitude, x)?.1)
    }
    fn value_and_gradient(&self, x: &Field) -> Result<(f64, Field)> {
        self.problem.hamiltonian_value_and_gradient_with(&self.amplitude, x)
    }
    fn curvature<'b>(&'b self, x: &Field) -> Result<Box<dyn LinearMap + 'b>> {
        Ok(Box::new(
            self.problem.excitation_curvature_with(self.amplitude.clone(), x)?,
        ))
    }
}

/// Newton objective over `alpha` for a frozen sample set.
pub struct AmplitudeObjective<'a> {
    problem: &'a Problem,
    samples: &'a SampleSet,
}

impl<'a> AmplitudeObjective<'a> {
    pub fn new(problem: &'a Problem, samples: &'a SampleSet) -> Self {
        Self { problem, samples }
    }
}

impl Objective for AmplitudeObjective<'_> {
    fn value(&self, x: &Field) -> Result<f64> {
        self.problem
            .kl_estimate(self.samples, &LogSpectrum::from_alpha_field(x))
    }
    fn gradient(&self, x: &Field) -> Result<Field> {
        self.problem
            .kl_gradient_amplitude(self.samples, &LogSpectrum::from_alpha_field(x))
    }
    fn curvature<'b>(&'b self, x: &Field) -> Result<Box<dyn LinearMap + 'b>> {
        Ok(Box::new(
            self.problem
                .kl_curvature_amplitude(self.samples, &LogSpectrum::from_alpha_field(x))?,
        ))
    }
}
