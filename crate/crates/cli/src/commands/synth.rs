//! `ncf synth`: draw a signal from the true spectrum and measure it.

use std::sync::Arc;

use ncf_core::grid::{draw_white_excitation, Field, HarmonicTransform};
use ncf_core::model::{MeasurementSetup, NoiseModel};
use ncf_core::operators::{AmplitudeOperator, LinearMap, LogSpectrum, PowerBinning};
use ncf_core::sampling::{stream_rng, StreamPurpose};
use serde_json::json;

use super::write_response;
use crate::config::{ResponseRecord, RunConfig};
use crate::error::{CliError, Result};
use crate::output::OutputDir;

pub struct Synthetic {
    pub excitation: Field,
    pub signal: Field,
    pub data: Field,
    pub response: ResponseRecord,
}

/// `s = A xi` on the natural binning, so every mode gets exactly
/// `p(|k|)`, and `d = R f(s) + n`; a zero noise variance gives `R f(s)`.
pub fn draw(cfg: &RunConfig) -> Result<Synthetic> {
    let grid = cfg.grid()?;
    let ft = Arc::new(HarmonicTransform::new(&grid));
    let law = cfg.truth()?;
    let natural = PowerBinning::natural(&grid.harmonic())?;
    let truth = LogSpectrum::from_fn(&natural, |k| law.power(k))?;
    let mut rng = stream_rng(cfg.seed, StreamPurpose::Synthesis, 0, 0);
    let excitation = draw_white_excitation(&grid.harmonic(), &mut rng);
    let signal = AmplitudeOperator::new(&truth, &natural, ft.clone())?.apply(&excitation);
    let (response, record) = cfg.response(&ft)?;
    let f = cfg.local_function()?;
    let variance = cfg
        .noise
        .variance
        .ok_or_else(|| CliError::config("noise.variance is required to synthesize data"))?;
    let data = if variance == 0.0 {
        response.apply(&f.apply(&signal))
    } else {
        let m = response.target().size();
        MeasurementSetup::new(response, f, NoiseModel::Fixed(vec![variance; m]))?.observe(&signal, &mut rng)?
    };
    if let Some((i, v)) = data.first_non_finite() {
        return Err(CliError::Numerical(format!("synthetic datum {i} is {v}")));
    }
    Ok(Synthetic {
        excitation,
        signal,
        data,
        response: record,
    })
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let syn = draw(cfg)?;
    let grid = cfg.grid()?;
    let binning = cfg.binning(&grid)?;
    let mut out = OutputDir::create(cfg.out_dir()?)?;
    out.field("excitation", &syn.excitation)?;
    out.field("signal", &syn.signal)?;
    out.field("data", &syn.data)?;
    out.vector("truth_spectrum", &cfg.truth_spectrum(&binning)?.power())?;
    out.json("binning.json", &binning.record())?;
    write_response(&mut out, &syn.response)?;
    let manifest = json!({
        "command": "synth",
        "seed": cfg.seed,
        "grid": { "shape": grid.shape(), "pixel_size": grid.pixel_size() },
        "nonlinearity": cfg.local_function()?.label(),
        "noise_variance": cfg.noise.variance,
        "data_points": syn.data.len(),
        "truth": cfg.spectrum.truth,
        "files": out.files(),
    });
    out.json("manifest.json", &manifest)?;
    log::info!("wrote {} data points to {}", syn.data.len(), cfg.out_dir()?.display());
    Ok(())
}
