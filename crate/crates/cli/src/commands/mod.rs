pub mod bench;
pub mod moments;
pub mod reconstruct;
pub mod synth;

use ncf_core::grid::{Field, GridSpace, Space};
use ncf_core::inference::posterior_moments;
use ncf_core::model::{PosteriorState, Problem, SampleSet};
use ncf_core::operators::LinearMap;

use crate::config::{ResponseRecord, RunConfig};
use crate::error::Result;
use crate::output::{plot_1d, plot_2d, OutputDir};

/// Writes a realized random response so it can be reused as a file.
fn write_response(out: &mut OutputDir, record: &ResponseRecord) -> Result<()> {
    match record {
        ResponseRecord::Identity => Ok(()),
        ResponseRecord::Mask(keep) => {
            let lines: Vec<&str> = keep.iter().map(|&k| if k { "1" } else { "0" }).collect();
            out.text("mask.txt", &(lines.join("\n") + "\n"))
        }
        ResponseRecord::Modes(modes) => {
            let lines: Vec<String> = modes.iter().map(|m| m.to_string()).collect();
            out.text("modes.txt", &(lines.join("\n") + "\n"))
        }
    }
}

fn truth_signal(cfg: &RunConfig, grid: &GridSpace) -> Result<Option<Field>> {
    match &cfg.data.truth_signal {
        Some(path) => Ok(Some(Field::read(Space::Grid(grid.clone()), path)?)),
        None => Ok(None),
    }
}

/// The map `A t`, the moment maps when samples exist, plot tables and the
/// plot script.
fn write_products(
    out: &mut OutputDir,
    cfg: &RunConfig,
    problem: &Problem,
    state: &PosteriorState,
    samples: Option<&SampleSet>,
) -> Result<()> {
    let grid = cfg.grid()?;
    let amp = problem.amplitude(&state.spectrum)?;
    let map = amp.apply(&state.t);
    out.field("reconstruction", &map)?;
    let s = map.real_values();
    let moments = samples.map(|set| posterior_moments(problem, state, set)).transpose()?;
    if let Some(m) = &moments {
        let space = Space::Grid(grid.clone());
        let as_field = |v: &[f64]| Field::from_real(space.clone(), v.to_vec());
        out.field("mean_signal", &as_field(&m.mean_signal)?)?;
        out.field("mean_nonlinear", &as_field(&m.mean_nonlinear)?)?;
        out.field("variance", &as_field(&m.variance)?)?;
        if let Some(e) = &m.relative_error {
            out.field("relative_error", &as_field(e)?)?;
        }
    }

    let truth = truth_signal(cfg, &grid)?;
    let law = cfg.spectrum.truth;
    let binning = problem.binning();
    let power = state.spectrum.power();
    let rows: Vec<Vec<f64>> = (0..binning.len())
        .filter(|&b| binning.kappa_centers()[b] > 0.0)
        .map(|b| {
            let k = binning.kappa_centers()[b];
            let mut row = vec![k, power[b]];
            if let Some(l) = &law {
                row.push(l.power(k));
            }
            row
        })
        .collect();
    let header: &[&str] = if law.is_some() { &["k", "power", "truth"] } else { &["k", "power"] };
    out.table("spectrum.tsv", header, &rows)?;

    let script = if grid.shape().len() == 1 {
        let dx = grid.pixel_size()[0];
        let sd: Vec<f64> = match &moments {
            Some(m) => m.variance.iter().map(|v| v.sqrt()).collect(),
            None => vec![0.0; s.len()],
        };
        let t = truth.as_ref().map(|f| f.real_values());
        let rows: Vec<Vec<f64>> = (0..s.len())
            .map(|i| {
                let mut row = vec![i as f64 * dx, s[i], s[i] - sd[i], s[i] + sd[i]];
                if let Some(t) = &t {
                    row.push(t[i]);
                }
                row
            })
            .collect();
        let header: &[&str] =
            if t.is_some() { &["x", "reconstruction", "lower", "upper", "truth"] } else { &["x", "reconstruction", "lower", "upper"] };
        out.table("signal.tsv", header, &rows)?;
        let count = samples.map_or(0, |set| set.len());
        if let Some(set) = samples {
            let draws: Vec<Vec<f64>> = set.iter().map(|xi| amp.apply(xi).real_values()).collect();
            let rows: Vec<Vec<f64>> = (0..s.len())
                .map(|i| std::iter::once(i as f64 * dx).chain(draws.iter().map(|d| d[i])).collect())
                .collect();
            out.table("signal_samples.tsv", &["x", "samples"], &rows)?;
        }
        plot_1d(count, truth.is_some(), law.is_some())
    } else {
        let shape = grid.shape();
        let mut maps = vec![("reconstruction_map.tsv", "reconstruction")];
        out.matrix("reconstruction_map.tsv", shape, &s)?;
        if let Some(m) = &moments {
            out.matrix("mean_nonlinear_map.tsv", shape, &m.mean_nonlinear)?;
            maps.push(("mean_nonlinear_map.tsv", "posterior mean of f(s)"));
            if let Some(e) = &m.relative_error {
                out.matrix("relative_error_map.tsv", shape, e)?;
                maps.push(("relative_error_map.tsv", "relative error"));
            }
        }
        if let Some(t) = &truth {
            out.matrix("truth_map.tsv", shape, &t.real_values())?;
            maps.push(("truth_map.tsv", "truth"));
        }
        plot_2d(&maps, law.is_some())
    };
    out.text("plot.gp", &script)
}
