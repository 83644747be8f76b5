//! `ncf bench`: KL convergence of the reformulated and the legacy loop on
//! the same data, with the reference KL at the true spectrum.

use ncf_core::inference::{reference_kl, run_legacy_inference, run_inference};
use ncf_core::nonlinearity::LocalFunction;
use serde_json::json;

use super::reconstruct::{load_problem, write_run};
use super::synth;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{plot_bench, OutputDir};

pub fn run(cfg: &RunConfig) -> Result<()> {
    if !matches!(cfg.local_function()?, LocalFunction::Identity) {
        return Err(CliError::config(
            "nonlinearity.function: the benchmark compares loops for the linear problem; use identity",
        ));
    }
    if cfg.noise.estimate.is_some() {
        return Err(CliError::config("noise.estimate: the benchmark needs a fixed noise variance"));
    }
    let problem = match &cfg.data.file {
        Some(_) => load_problem(cfg)?,
        None => cfg.problem(synth::draw(cfg)?.data)?,
    };
    let truth = cfg.truth_spectrum(problem.binning())?;
    let inference = cfg.inference();

    let reformulated = run_inference(&problem, &inference)?;
    let legacy = run_legacy_inference(&problem, &inference, &cfg.legacy)?;
    let reference = reference_kl(&problem, &truth, &inference, cfg.bench.reference_samples)?;

    let mut out = OutputDir::create(cfg.out_dir()?)?;
    write_run(&mut out, "reformulated_", &reformulated)?;
    write_run(&mut out, "legacy_", &legacy)?;
    let a = reformulated.history.kl_series();
    let b = legacy.history.kl_series();
    let rows: Vec<Vec<f64>> = (0..a.len().max(b.len()))
        .map(|i| {
            let at = |s: &[f64]| s.get(i).copied().unwrap_or(f64::NAN);
            vec![(i + 1) as f64, at(&a), at(&b)]
        })
        .collect();
    out.table("kl.tsv", &["iteration", "reformulated", "legacy"], &rows)?;
    out.text("bench.gp", &plot_bench(reference))?;
    let report = json!({
        "reference_kl": reference,
        "reformulated": { "kl": a, "status": reformulated.status },
        "legacy": { "kl": b, "status": legacy.status },
    });
    out.json("bench.json", &report)?;
    let manifest = json!({
        "command": "bench",
        "seed": cfg.seed,
        "data": cfg.data.file,
        "bins": problem.binning().len(),
        "inference": inference,
        "legacy": cfg.legacy,
        "reference_samples": cfg.bench.reference_samples,
        "files": out.files(),
    });
    out.json("manifest.json", &manifest)?;
    log::info!(
        "final KL: reformulated {:?}, legacy {:?}, reference {reference}",
        a.last(),
        b.last()
    );
    Ok(())
}
