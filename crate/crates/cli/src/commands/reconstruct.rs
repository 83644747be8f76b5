//! `ncf reconstruct`: joint signal and spectrum inference on a data file.

use std::sync::Arc;

use ncf_core::grid::HarmonicTransform;
use ncf_core::inference::{run_inference, InferenceRun, RunStatus};
use ncf_core::model::Problem;
use serde_json::json;

use super::write_products;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::OutputDir;

/// The problem for the configured data file.
pub fn load_problem(cfg: &RunConfig) -> Result<Problem> {
    let grid = cfg.grid()?;
    let (response, _) = cfg.response(&Arc::new(HarmonicTransform::new(&grid)))?;
    let data = cfg.read_data(response.target().size())?;
    if let Some((i, v)) = data.first_non_finite() {
        return Err(CliError::config(format!("data.file: datum {i} is {v}")));
    }
    cfg.problem(data)
}

/// Posterior state, samples and history of `run`.
pub fn write_run(out: &mut OutputDir, prefix: &str, run: &InferenceRun) -> Result<()> {
    let state = &run.state;
    out.field(&format!("{prefix}t"), &state.t)?;
    out.vector(&format!("{prefix}alpha"), state.spectrum.alpha())?;
    out.vector(&format!("{prefix}tau"), &state.spectrum.tau())?;
    out.vector(&format!("{prefix}power"), &state.spectrum.power())?;
    if let Some(eta) = &state.eta {
        out.vector(&format!("{prefix}eta"), eta)?;
    }
    if let Some(samples) = &run.samples {
        for (i, xi) in samples.iter().enumerate() {
            out.field(&format!("{prefix}samples/sample_{i:03}"), xi)?;
        }
    }
    out.history(prefix, &run.history)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let problem = load_problem(cfg)?;
    let mut out = OutputDir::create(cfg.out_dir()?)?;
    let run = run_inference(&problem, &cfg.inference())?;
    write_run(&mut out, "", &run)?;
    out.json("binning.json", &problem.binning().record())?;
    write_products(&mut out, cfg, &run.problem, &run.state, run.samples.as_ref())?;
    let last = run.history.last();
    let result = json!({
        "status": run.status,
        "iterations": run.history.len(),
        "kl": last.map(|r| r.kl),
        "energy": last.map(|r| r.energy),
        "mean_noise_variance": run.state.eta.as_ref().map(|e| e.iter().map(|v| v.exp()).sum::<f64>() / e.len() as f64),
    });
    out.json("result.json", &result)?;
    let manifest = json!({
        "command": "reconstruct",
        "seed": cfg.seed,
        "data": cfg.data.file,
        "nonlinearity": cfg.local_function()?.label(),
        "bins": problem.binning().len(),
        "inference": cfg.inference(),
        "files": out.files(),
    });
    out.json("manifest.json", &manifest)?;
    if let RunStatus::Stalled { iteration, stage } = &run.status {
        return Err(CliError::Numerical(format!(
            "the {stage} update stalled in iteration {iteration}; partial results written"
        )));
    }
    log::info!("{} iterations, status {:?}", run.history.len(), run.status);
    Ok(())
}
