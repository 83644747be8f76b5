//! `ncf moments`: recompute posterior summaries and plots from the state and
//! samples a reconstruction left in the output directory.

use std::fs;

use ncf_core::grid::{read_array, Field};
use ncf_core::model::{PosteriorState, SampleSet};
use ncf_core::operators::LogSpectrum;
use serde_json::json;

use super::reconstruct::load_problem;
use super::write_products;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::OutputDir;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let problem = load_problem(cfg)?;
    let mut out = OutputDir::create(cfg.out_dir()?)?;
    let t = Field::read(problem.harmonic_space().clone(), &out.path("t.f8"))?;
    let alpha = read_array(&out.path("alpha.f8"))?.values;
    if alpha.len() != problem.binning().len() {
        return Err(CliError::config(format!(
            "alpha.f8 has {} bins, the configured binning {}",
            alpha.len(),
            problem.binning().len()
        )));
    }
    let state = PosteriorState {
        t,
        spectrum: LogSpectrum::from_alpha(alpha),
        eta: None,
    };
    let dir = out.path("samples");
    let mut names: Vec<String> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()
            .map_err(CliError::io(&dir))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(CliError::io(&dir)(e)),
    };
    names.retain(|n| n.starts_with("sample_") && n.ends_with(".f8"));
    names.sort();
    let samples = names
        .iter()
        .map(|n| Field::read(problem.harmonic_space().clone(), &dir.join(n)))
        .collect::<ncf_core::Result<Vec<_>>>()?;
    let samples = if samples.is_empty() { None } else { Some(SampleSet::new(samples)?) };
    write_products(&mut out, cfg, &problem, &state, samples.as_ref())?;
    out.json(
        "moments.json",
        &json!({ "command": "moments", "samples": names.len(), "files": out.files() }),
    )?;
    log::info!("moments from {} samples", names.len());
    Ok(())
}
