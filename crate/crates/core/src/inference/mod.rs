//! The outer loop: excitation Newton, posterior samples, amplitude-spectrum
//! Newton and an optional noise update, repeated until the KL settles.

mod legacy;
mod moments;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{draw_white_excitation, Field, Space};
use crate::model::{AmplitudeObjective, EstimatedNoise, ExcitationObjective, NoiseModel, PosteriorState, Problem, SampleSet};
use crate::operators::{LinearMap, LogSpectrum};
use crate::sampling::{draw_sample_set, stream_rng, SamplingJob, StreamPurpose};
use crate::solvers::{log_det_estimate, relaxed_newton, CgConfig, InnerSolve, NewtonConfig, NewtonError, Objective};

pub use legacy::{legacy_step, run_legacy_inference, LegacyConfig, LegacyStep};
pub use moments::{posterior_moments, Moments};

/// Samples per outer iteration: `initial`, doubled every `double_every`
/// iterations, capped at `max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSchedule {
    pub initial: usize,
    pub double_every: usize,
    pub max: usize,
}

impl Default for SampleSchedule {
    fn default() -> Self {
        Self {
            initial: 3,
            double_every: 10,
            max: 20,
        }
    }
}

impl SampleSchedule {
    /// A schedule that always draws `n` samples.
    pub fn constant(n: usize) -> Self {
        Self {
            initial: n,
            double_every: 0,
            max: n,
        }
    }

    /// Sample count at (zero-based) outer iteration `iteration`.
    pub fn count(&self, iteration: usize) -> usize {
        let doublings = match self.double_every {
            0 => 0,
            d => (iteration / d).min(63) as u32,
        };
        self.initial
            .saturating_mul(1usize << doublings)
            .min(self.max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial == 0 || self.max < self.initial {
            return Err(Error::invalid("sample schedule", "need 1 <= initial <= max"));
        }
        Ok(())
    }
}

/// Inverse-gamma prior on the noise variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseEstimation {
    pub beta: f64,
    /// Absolute scale; when absent `q_relative` times the data variance.
    pub q: Option<f64>,
    pub q_relative: f64,
}

impl Default for NoiseEstimation {
    fn default() -> Self {
        Self {
            beta: 2.0000002,
            q: None,
            q_relative: 2.0,
        }
    }
}

impl NoiseEstimation {
    pub fn resolve_q(&self, data_variance: f64) -> f64 {
        self.q.unwrap_or(self.q_relative * data_variance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(Error::invalid("noise estimation", "beta must exceed 1"));
        }
        match self.q {
            Some(q) if !(q > 0.0 && q.is_finite()) => {
                Err(Error::invalid("noise estimation", "q must be positive"))
            }
            None if !(self.q_relative > 0.0 && self.q_relative.is_finite()) => {
                Err(Error::invalid("noise estimation", "q_relative must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Stochastic Lanczos estimate of `ln det Xi^{-1}` for the KL diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogDetConfig {
    pub probes: usize,
    pub lanczos_steps: usize,
}

impl Default for LogDetConfig {
    fn default() -> Self {
        Self {
            probes: 16,
            lanczos_steps: 40,
        }
    }
}

impl LogDetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes == 0 || self.lanczos_steps == 0 {
            return Err(Error::invalid("log det config", "probes and lanczos_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Smoothness prior strength on the log spectrum.
    pub sigma: f64,
    pub outer_iterations: usize,
    pub excitation_newton: NewtonConfig,
    pub amplitude_newton: NewtonConfig,
    pub sampling_cg: CgConfig,
    pub samples: SampleSchedule,
    pub antithetic: bool,
    pub log_det: LogDetConfig,
    pub noise_estimation: Option<NoiseEstimation>,
    /// Flat starting power.
    pub initial_power: f64,
    /// Standard deviation of the white starting excitation.
    pub initial_excitation_scale: f64,
    pub update_spectrum: bool,
    /// Stop once the relative KL change stays below this for
    /// `convergence_window` consecutive iterations (0 disables).
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            outer_iterations: 100,
            excitation_newton: NewtonConfig {
                max_steps: 20,
                grad_tol: 1e-5,
                inner: InnerSolve::ConjugateGradient(CgConfig {
                    rel_tol: 1e-4,
                    max_iter: 500,
                }),
                ..NewtonConfig::default()
            },
            amplitude_newton: NewtonConfig {
                max_steps: 5,
                grad_tol: 1e-6,
                inner: InnerSolve::Dense,
                ..NewtonConfig::default()
            },
            sampling_cg: CgConfig {
                rel_tol: 1e-6,
                max_iter: 2000,
            },
            samples: SampleSchedule::default(),
            antithetic: false,
            log_det: LogDetConfig::default(),
            noise_estimation: None,
            initial_power: 1.8e-2,
            initial_excitation_scale: 1e-3,
            update_spectrum: true,
            convergence_tol: 1e-4,
            convergence_window: 5,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("inference config", "sigma must be positive"));
        }
        if !(self.initial_power > 0.0 && self.initial_power.is_finite()) {
            return Err(Error::invalid("inference config", "initial_power must be positive"));
        }
        if !(self.initial_excitation_scale >= 0.0 && self.initial_excitation_scale.is_finite()) {
            return Err(Error::invalid(
                "inference config",
                "initial_excitation_scale must be non-negative",
            ));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("inference config", "convergence_tol must be non-negative"));
        }
        self.excitation_newton.validate()?;
        self.amplitude_newton.validate()?;
        self.sampling_cg.validate()?;
        self.samples.validate()?;
        self.log_det.validate()?;
        if let Some(n) = &self.noise_estimation {
            n.validate()?;
        }
        Ok(())
    }
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// One-based.
    pub iteration: usize,
    /// Sampled KL divergence, up to a constant, at the iteration's
    /// excitation mean and incoming spectrum.
    pub kl: f64,
    /// The part of `kl` the spectrum update minimizes: sampled likelihood,
    /// smoothness and noise prior.
    pub energy: f64,
    pub hamiltonian: f64,
    pub excitation_grad_norm: f64,
    pub amplitude_grad_norm: Option<f64>,
    pub noise_grad_norm: Option<f64>,
    pub mean_noise_variance: Option<f64>,
    pub samples: usize,
    pub excitation_steps: usize,
    pub amplitude_steps: usize,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    records: Vec<IterationRecord>,
}

impl RunHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; iterations must increase strictly.
    pub fn push(&mut self, record: IterationRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::invalid(
                    "run history",
                    format!("iteration {} after {}", record.iteration, last.iteration),
                ));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn kl_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.kl).collect()
    }

    /// The records with wall times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunHistory {
        RunHistory {
            records: self
                .records
                .iter()
                .map(|r| IterationRecord {
                    wall_time: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Converged { iteration: usize },
    MaxIterations,
    /// A Newton stage could not decrease its objective from its start point.
    Stalled { iteration: usize, stage: String },
}

/// Result of an inference run; partial when `status` is `Stalled`.
#[derive(Clone, Debug)]
pub struct InferenceRun {
    pub state: PosteriorState,
    pub history: RunHistory,
    /// Samples of the last completed iteration.
    pub samples: Option<SampleSet>,
    pub status: RunStatus,
    /// The problem with the final noise estimate in place.
    pub problem: Problem,
}

impl InferenceRun {
    pub fn converged(&self) -> bool {
        !matches!(self.status, RunStatus::Stalled { .. })
    }
}

fn harmonic_of(problem: &Problem) -> crate::grid::HarmonicSpace {
    match problem.harmonic_space() {
        Space::Harmonic(h) => h.clone(),
        _ => unreachable!("transforms always target a harmonic space"),
    }
}

/// Population variance of the data values.
pub fn data_variance(data: &Field) -> f64 {
    let v = data.real_values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Near-zero white excitation, flat spectrum, and the data variance as the
/// noise guess when the noise is estimated.
pub fn initial_state(problem: &Problem, cfg: &InferenceConfig) -> Result<PosteriorState> {
    let mut rng = stream_rng(cfg.seed, StreamPurpose::Initialization, 0, 0);
    let t = draw_white_excitation(&harmonic_of(problem), &mut rng).scaled(cfg.initial_excitation_scale);
    let spectrum = LogSpectrum::flat(problem.binning().len(), cfg.initial_power)?;
    let eta = if cfg.noise_estimation.is_some() {
        let var = data_variance(problem.data());
        if !(var > 0.0) {
            return Err(Error::invalid("noise estimation", "data variance must be positive"));
        }
        Some(vec![var.ln(); problem.data().len()])
    } else {
        problem.setup().noise().estimated().map(|n| n.eta.clone())
    };
    Ok(PosteriorState { t, spectrum, eta })
}

struct StageOutcome {
    point: Field,
    grad_norm: f64,
    steps: usize,
    stalled: bool,
}

fn newton_stage(objective: &dyn Objective, start: Field, cfg: &NewtonConfig, stage: &str) -> Result<StageOutcome> {
    match relaxed_newton(objective, start, cfg) {
        Ok(out) => Ok(StageOutcome {
            point: out.point,
            grad_norm: out.grad_norm,
            steps: out.steps,
            stalled: false,
        }),
        Err(NewtonError::Stalled(out)) => {
            // after some progress, or with a gradient at the rounding level of
            // the value, the line search failing only means we are done
            let stuck = out.steps == 0 && out.grad_norm > 1e-6 * out.value.abs().max(1.0);
            if stuck {
                log::warn!("{stage} Newton stalled at its start point (|g| = {:.3e})", out.grad_norm);
            } else {
                log::debug!("{stage} Newton stopped after {} steps (|g| = {:.3e})", out.steps, out.grad_norm);
            }
            Ok(StageOutcome {
                point: out.point,
                grad_norm: out.grad_norm,
                steps: out.steps,
                stalled: stuck,
            })
        }
        Err(NewtonError::Objective(e)) => Err(e),
    }
}

/// Runs the outer loop from [`initial_state`].
pub fn run_inference(problem: &Problem, cfg: &InferenceConfig) -> Result<InferenceRun> {
    cfg.validate()?;
    let init = initial_state(problem, cfg)?;
    run_inference_from(problem, cfg, init)
}

/// Runs the outer loop from a given state.
pub fn run_inference_from(problem: &Problem, cfg: &InferenceConfig, init: PosteriorState) -> Result<InferenceRun> {
    cfg.validate()?;
    let start = Instant::now();
    let mut problem = problem.with_sigma(cfg.sigma)?;
    if let Some(ne) = &cfg.noise_estimation {
        let eta = match &init.eta {
            Some(e) => e.clone(),
            None => return Err(Error::invalid("noise estimation", "initial state has no noise estimate")),
        };
        let q = ne.resolve_q(data_variance(problem.data()));
        problem = problem.with_noise(NoiseModel::Estimated(EstimatedNoise::new(eta, ne.beta, q)?))?;
    }
    let estimate_noise = cfg.noise_estimation.is_some();
    problem.harmonic_space().ensure_eq(init.t.space())?;
    if init.spectrum.len() != problem.binning().len() {
        return Err(Error::invalid("initial state", "spectrum does not match the binning"));
    }

    let mut state = init;
    let mut history = RunHistory::new();
    let mut last_samples = None;
    let mut status = RunStatus::MaxIterations;
    let mut quiet = 0;

    for it in 0..cfg.outer_iterations {
        let excitation = {
            let obj = ExcitationObjective::new(&problem, &state.spectrum)?;
            newton_stage(&obj, state.t.clone(), &cfg.excitation_newton, "excitation")?
        };
        state.t = excitation.point;
        if excitation.stalled {
            status = RunStatus::Stalled {
                iteration: it + 1,
                stage: "excitation".into(),
            };
            break;
        }

        let count = cfg.samples.count(it);
        let samples = draw_sample_set(&SamplingJob {
            problem: &problem,
            state: &state,
            count,
            seed: cfg.seed,
            iteration: it as u64,
            cg: cfg.sampling_cg,
            antithetic: cfg.antithetic,
        })?;

        // the KL of the state the samples were drawn at, before the spectrum
        // is fitted to them
        let estimate = kl_divergence(&problem, &state, &samples, cfg, it as u64)?;
        let kl = estimate.kl;
        let hamiltonian = problem.hamiltonian_value(&state.t, &state.spectrum)?;

        let mut amplitude_steps = 0;
        let mut amplitude_grad_norm = None;
        if cfg.update_spectrum {
            let obj = AmplitudeObjective::new(&problem, &samples);
            let out = newton_stage(&obj, state.spectrum.alpha_field(), &cfg.amplitude_newton, "amplitude")?;
            state.spectrum = LogSpectrum::from_alpha_field(&out.point);
            amplitude_steps = out.steps;
            amplitude_grad_norm = Some(out.grad_norm);
            if out.stalled {
                status = RunStatus::Stalled {
                    iteration: it + 1,
                    stage: "amplitude".into(),
                };
                last_samples = Some(samples);
                break;
            }
        }

        let mut noise_grad_norm = None;
        if estimate_noise {
            let eta = problem.updated_eta(&samples, &state.spectrum)?;
            problem.set_eta(eta.clone())?;
            state.eta = Some(eta);
            noise_grad_norm = Some(problem.kl_gradient_noise(&samples, &state.spectrum)?.norm());
        }

        let mean_noise_variance = state
            .eta
            .as_ref()
            .map(|e| e.iter().map(|x| x.exp()).sum::<f64>() / e.len() as f64);
        let previous = history.last().map(|r| r.kl);
        history.push(IterationRecord {
            iteration: it + 1,
            kl,
            energy: estimate.energy,
            hamiltonian,
            excitation_grad_norm: excitation.grad_norm,
            amplitude_grad_norm,
            noise_grad_norm,
            mean_noise_variance,
            samples: samples.len(),
            excitation_steps: excitation.steps,
            amplitude_steps,
            wall_time: start.elapsed().as_secs_f64(),
        })?;
        log::info!(
            "iteration {:>4}: KL {kl:.6e}, H {hamiltonian:.6e}, {} samples",
            it + 1,
            samples.len()
        );
        last_samples = Some(samples);

        if let Some(prev) = previous {
            if (kl - prev).abs() <= cfg.convergence_tol * kl.abs().max(f64::MIN_POSITIVE) {
                quiet += 1;
            } else {
                quiet = 0;
            }
        }
        if cfg.convergence_window > 0 && cfg.convergence_tol > 0.0 && quiet >= cfg.convergence_window {
            status = RunStatus::Converged { iteration: it + 1 };
            break;
        }
    }

    Ok(InferenceRun {
        state,
        history,
        samples: last_samples,
        status,
        problem,
    })
}

/// Parts of the sampled KL divergence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    /// `energy + <xi^† xi>/2 + ln det(Xi^{-1})/2`, the divergence up to a
    /// constant.
    pub kl: f64,
    /// Sampled likelihood, smoothness and noise prior.
    pub energy: f64,
    /// Estimated `ln det Xi^{-1}` at the state.
    pub log_det: f64,
}

/// The sampled KL divergence between the Gaussian approximation at `state`
/// and the posterior. The energy alone is what the spectrum update sees; the
/// excitation prior and the entropy change with the spectrum too, so they
/// are needed to compare iterations.
pub fn kl_divergence(
    problem: &Problem,
    state: &PosteriorState,
    samples: &SampleSet,
    cfg: &InferenceConfig,
    iteration: u64,
) -> Result<KlEstimate> {
    let energy = problem.kl_estimate(samples, &state.spectrum)?;
    let prior = samples.iter().map(|xi| 0.5 * xi.dot(xi)).sum::<f64>() / samples.len() as f64;
    let curvature = problem.excitation_curvature(&state.t, &state.spectrum)?;
    let harmonic = harmonic_of(problem);
    let mut rng = stream_rng(cfg.seed, StreamPurpose::Entropy, iteration, 0);
    let probes: Vec<Field> = (0..cfg.log_det.probes)
        .map(|_| draw_white_excitation(&harmonic, &mut rng))
        .collect();
    let log_det = log_det_estimate(&curvature, &probes, cfg.log_det.lanczos_steps)?;
    Ok(KlEstimate {
        kl: energy + prior + 0.5 * log_det,
        energy,
        log_det,
    })
}

/// Stream iteration reserved for reference evaluations.
const REFERENCE_ITERATION: u64 = 0xff_ffff_ffff;

/// [`kl_divergence`] at the minimizing excitation for a fixed spectrum,
/// estimated with `count` samples (the true-spectrum reference when given
/// the true spectrum).
pub fn reference_kl(problem: &Problem, spectrum: &LogSpectrum, cfg: &InferenceConfig, count: usize) -> Result<f64> {
    cfg.validate()?;
    let problem = problem.with_sigma(cfg.sigma)?;
    let obj = ExcitationObjective::new(&problem, spectrum)?;
    let newton = NewtonConfig {
        max_steps: 50,
        grad_tol: 1e-9,
        inner: InnerSolve::ConjugateGradient(CgConfig {
            rel_tol: 1e-10,
            max_iter: 5000,
        }),
        ..NewtonConfig::default()
    };
    let out = newton_stage(&obj, Field::zeros(problem.harmonic_space().clone()), &newton, "reference")?;
    let state = PosteriorState {
        t: out.point,
        spectrum: spectrum.clone(),
        eta: None,
    };
    let samples = draw_sample_set(&SamplingJob {
        problem: &problem,
        state: &state,
        count,
        seed: cfg.seed,
        iteration: REFERENCE_ITERATION,
        cg: cfg.sampling_cg,
        antithetic: false,
    })?;
    Ok(kl_divergence(&problem, &state, &samples, cfg, REFERENCE_ITERATION)?.kl)
}

/// `A^† R^† N^{-1} d` for the current spectrum and noise.
pub(crate) fn information_source(problem: &Problem, spectrum: &LogSpectrum) -> Result<Field> {
    let amp = problem.amplitude(spectrum)?;
    let inv = problem.setup().noise().inverse_variances();
    let back = problem.setup().response().adjoint(&problem.data().weighted(&inv));
    Ok(amp.adjoint(&back))
}
