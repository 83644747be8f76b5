//! Posterior samples of the excitation by mock observation.
//!
//! A prior draw `xi'` is observed through the linearized response with fresh
//! noise, reconstructed with the curvature `Xi^{-1}`, and the residual is
//! shifted onto the current mean: `xi* = xi' - t' + t`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{draw_white_excitation, Field, HarmonicSpace, Space};
use crate::model::{ExcitationCurvature, PosteriorState, Problem, SampleSet};
use crate::operators::LinearMap;
use crate::solvers::{solve_spd, CgConfig};

pub use crate::model::LinearizedResponse;

/// What an RNG stream is used for; part of the stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamPurpose {
    Initialization = 1,
    Samples = 2,
    Probes = 3,
    Synthesis = 4,
    /// Log-determinant probes for the KL diagnostic.
    Entropy = 5,
}

/// Independent ChaCha8 stream for `(purpose, iteration, index)` under `seed`.
pub fn stream_rng(seed: u64, purpose: StreamPurpose, iteration: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((purpose as u64) << 56) | ((iteration & 0xff_ffff_ffff) << 16) | (index & 0xffff);
    rng.set_stream(id);
    rng
}

/// `R* = R f'(A t) A` at the state's mean and spectrum.
pub fn linearized_response(state: &PosteriorState, problem: &Problem) -> Result<LinearizedResponse> {
    let amp = problem.amplitude(&state.spectrum)?;
    LinearizedResponse::new(amp, problem.setup().clone(), &state.t)
}

/// Draws posterior samples around one expansion point, counting CG solves.
pub struct PosteriorSampler {
    curvature: ExcitationCurvature,
    harmonic: HarmonicSpace,
    t: Field,
    noise_sd: Vec<f64>,
    cg: CgConfig,
    solves: AtomicUsize,
}

impl PosteriorSampler {
    pub fn new(problem: &Problem, state: &PosteriorState, cg: CgConfig) -> Result<Self> {
        cg.validate()?;
        let harmonic = match problem.harmonic_space() {
            Space::Harmonic(h) => h.clone(),
            other => return Err(Error::invalid("sampler", format!("expected a harmonic space, got {other}"))),
        };
        Ok(Self {
            curvature: state.curvature(problem)?,
            harmonic,
            t: state.t.clone(),
            noise_sd: problem.setup().noise().variances().iter().map(|v| v.sqrt()).collect(),
            cg,
            solves: AtomicUsize::new(0),
        })
    }

    pub fn curvature(&self) -> &ExcitationCurvature {
        &self.curvature
    }

    /// Number of curvature solves performed so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// One zero-mean draw `xi' - t'` with covariance `Xi`.
    pub fn draw_residual<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Field> {
        let prior = draw_white_excitation(&self.harmonic, rng);
        let response = self.curvature.response();
        let mut mock = response.apply(&prior);
        for (v, sd) in mock.values_mut().iter_mut().zip(&self.noise_sd) {
            v.re += sd * rng.sample::<f64, _>(StandardNormal);
        }
        let j = response.adjoint(&mock.weighted(self.curvature.noise_inverse()));
        let out = solve_spd(&self.curvature, &j, &self.cg)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        if !out.converged {
            log::warn!(
                "sample solve stopped at residual {:.3e} after {} iterations",
                out.residual,
                out.iterations
            );
            return Err(Error::NotConverged {
                iterations: out.iterations,
                residual: out.residual,
            });
        }
        Ok(&prior - &out.solution)
    }

    /// `xi* = t + (xi' - t')`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Field> {
        Ok(&self.t + &self.draw_residual(rng)?)
    }

    /// `t + r` and `t - r` from a single solve.
    pub fn draw_antithetic<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Field, Field)> {
        let r = self.draw_residual(rng)?;
        Ok((&self.t + &r, &self.t - &r))
    }
}

/// A batch of samples at one state.
#[derive(Clone, Copy)]
pub struct SamplingJob<'a> {
    pub problem: &'a Problem,
    pub state: &'a PosteriorState,
    pub count: usize,
    pub seed: u64,
    /// Outer iteration the samples belong to; selects the RNG streams.
    pub iteration: u64,
    pub cg: CgConfig,
    pub antithetic: bool,
}

impl SamplingJob<'_> {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("sampling job", "count must be at least 1"));
        }
        Ok(())
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        stream_rng(self.seed, StreamPurpose::Samples, self.iteration, index as u64)
    }
}

/// Sample number `index` of the job (a fresh sampler, so one solve).
pub fn draw_posterior_sample(job: &SamplingJob<'_>, index: usize) -> Result<Field> {
    job.validate()?;
    let sampler = PosteriorSampler::new(job.problem, job.state, job.cg)?;
    sampler.draw(&mut job.rng(index))
}

/// All samples of the job together with the sampler that drew them.
pub fn draw_sample_set_with(job: &SamplingJob<'_>) -> Result<(SampleSet, PosteriorSampler)> {
    job.validate()?;
    let sampler = PosteriorSampler::new(job.problem, job.state, job.cg)?;
    let mut samples = Vec::with_capacity(job.count);
    if job.antithetic {
        for pair in 0..job.count.div_ceil(2) {
            let (a, b) = sampler.draw_antithetic(&mut job.rng(pair))?;
            samples.push(a);
            if samples.len() < job.count {
                samples.push(b);
            }
        }
    } else {
        for i in 0..job.count {
            samples.push(sampler.draw(&mut job.rng(i))?);
        }
    }
    Ok((SampleSet::new(samples)?, sampler))
}

pub fn draw_sample_set(job: &SamplingJob<'_>) -> Result<SampleSet> {
    Ok(draw_sample_set_with(job)?.0)
}
