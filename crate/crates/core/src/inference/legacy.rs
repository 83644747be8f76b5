//! The signal-space critical filter loop: Wiener map at the current
//! spectrum, probed uncertainty power, then the critical-filter spectrum.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{information_source, kl_divergence, InferenceConfig, InferenceRun, IterationRecord, RunHistory, RunStatus};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::model::legacy::{estimate_uncertainty_power, power_statistic, solve_cf_update};
use crate::model::{NoiseModel, PosteriorState, Problem};
use crate::operators::{LinearMap, LogSpectrum};
use crate::sampling::{draw_sample_set, stream_rng, SamplingJob, StreamPurpose};
use crate::solvers::{solve_spd, CgConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LegacyConfig {
    /// Hutchinson probes for the uncertainty power.
    pub probes: usize,
    pub wiener_cg: CgConfig,
}

impl Default for LegacyConfig {
    fn default() -> Self {
        Self {
            probes: 16,
            wiener_cg: CgConfig {
                rel_tol: 1e-8,
                max_iter: 5000,
            },
        }
    }
}

/// Intermediate quantities of one legacy iteration.
#[derive(Clone, Debug)]
pub struct LegacyStep {
    /// Wiener mean in excitation coordinates.
    pub t: Field,
    /// `sum dk |F m|^2` per bin.
    pub map_power: Vec<f64>,
    /// Probed `Tr_k[F D F^†]`.
    pub uncertainty_power: Vec<f64>,
    pub next_tau: Vec<f64>,
}

/// Wiener solve and critical-filter update at `spectrum`.
pub fn legacy_step(
    problem: &Problem,
    spectrum: &LogSpectrum,
    iteration: usize,
    cfg: &InferenceConfig,
    legacy: &LegacyConfig,
) -> Result<LegacyStep> {
    let source = information_source(problem, spectrum)?;
    let zero = Field::zeros(problem.harmonic_space().clone());
    let curv = problem.excitation_curvature(&zero, spectrum)?;
    let out = solve_spd(&curv, &source, &legacy.wiener_cg)?;
    if !out.converged {
        return Err(Error::NotConverged {
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    let t = out.solution;
    let m = problem.amplitude(spectrum)?.apply(&t);
    let map_power = power_statistic(problem, &m)?;
    let mut rng = stream_rng(cfg.seed, StreamPurpose::Probes, iteration as u64, 0);
    let uncertainty_power =
        estimate_uncertainty_power(problem, &t, spectrum, legacy.probes, &legacy.wiener_cg, &mut rng)?;
    let total: Vec<f64> = map_power.iter().zip(&uncertainty_power).map(|(a, b)| a + b).collect();
    let next_tau = solve_cf_update(problem, &total, &spectrum.tau())?;
    Ok(LegacyStep {
        t,
        map_power,
        uncertainty_power,
        next_tau,
    })
}

/// Alternates Wiener solves and critical-filter spectrum updates, recording
/// the same sampled KL as [`super::run_inference`] on the same streams.
pub fn run_legacy_inference(problem: &Problem, cfg: &InferenceConfig, legacy: &LegacyConfig) -> Result<InferenceRun> {
    cfg.validate()?;
    if !problem.setup().nonlinearity().is_identity() {
        return Err(Error::invalid("legacy inference", "requires the identity nonlinearity"));
    }
    if !matches!(problem.setup().noise(), NoiseModel::Fixed(_)) || cfg.noise_estimation.is_some() {
        return Err(Error::invalid("legacy inference", "requires a fixed noise covariance"));
    }
    if legacy.probes == 0 {
        return Err(Error::invalid("legacy inference", "probes must be at least 1"));
    }
    legacy.wiener_cg.validate()?;
    let start = Instant::now();
    let problem = problem.with_sigma(cfg.sigma)?;
    let mut spectrum = LogSpectrum::flat(problem.binning().len(), cfg.initial_power)?;
    let mut t = Field::zeros(problem.harmonic_space().clone());
    let mut history = RunHistory::new();
    let mut last_samples = None;

    for it in 0..cfg.outer_iterations {
        let step = legacy_step(&problem, &spectrum, it, cfg, legacy)?;
        t = step.t;
        let state = PosteriorState {
            t: t.clone(),
            spectrum: spectrum.clone(),
            eta: None,
        };
        let samples = draw_sample_set(&SamplingJob {
            problem: &problem,
            state: &state,
            count: cfg.samples.count(it),
            seed: cfg.seed,
            iteration: it as u64,
            cg: cfg.sampling_cg,
            antithetic: cfg.antithetic,
        })?;
        let estimate = kl_divergence(&problem, &state, &samples, cfg, it as u64)?;
        let kl = estimate.kl;
        let hamiltonian = problem.hamiltonian_value(&t, &spectrum)?;
        let excitation_grad = problem.hamiltonian_gradient_excitation(&t, &spectrum)?.norm();
        spectrum = LogSpectrum::from_tau(&step.next_tau);
        let amplitude_grad = problem.kl_gradient_amplitude(&samples, &spectrum)?.norm();
        history.push(IterationRecord {
            iteration: it + 1,
            kl,
            energy: estimate.energy,
            hamiltonian,
            excitation_grad_norm: excitation_grad,
            amplitude_grad_norm: Some(amplitude_grad),
            noise_grad_norm: None,
            mean_noise_variance: None,
            samples: samples.len(),
            excitation_steps: 1,
            amplitude_steps: 1,
            wall_time: start.elapsed().as_secs_f64(),
        })?;
        log::info!("legacy iteration {:>4}: KL {kl:.6e}", it + 1);
        last_samples = Some(samples);
    }

    Ok(InferenceRun {
        state: PosteriorState {
            t,
            spectrum,
            eta: None,
        },
        history,
        samples: last_samples,
        status: RunStatus::MaxIterations,
        problem,
    })
}
