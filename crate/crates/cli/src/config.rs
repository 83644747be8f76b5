//! The run configuration file (TOML) and its translation into core objects.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ncf_core::grid::{DataSpace, Field, GridSpace, HarmonicTransform, Space};
use ncf_core::inference::{InferenceConfig, LegacyConfig, NoiseEstimation, SampleSchedule};
use ncf_core::model::{MeasurementSetup, NoiseModel, Problem};
use ncf_core::nonlinearity::{LocalFunction, Piecewise};
use ncf_core::operators::{
    FourierSamplingResponse, IdentityResponse, LinearMap, LogSpectrum, MaskResponse, PowerBinning, SmoothnessPrior,
};
use ncf_core::sampling::{stream_rng, StreamPurpose};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` wins.
    pub out: Option<PathBuf>,
    pub grid: GridConfig,
    #[serde(default)]
    pub binning: BinningConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub response: ResponseConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub legacy: LegacyConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub shape: Vec<usize>,
    /// Defaults to a unit total volume.
    pub pixel_size: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BinningConfig {
    /// One bin per distinct mode magnitude.
    #[default]
    Natural,
    Logarithmic { bins: usize },
}

/// `p(k) = amplitude / (1 + (k / scale)^inner)^outer`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLaw {
    pub amplitude: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub inner: f64,
    #[serde(default = "two")]
    pub outer: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl PowerLaw {
    pub fn power(&self, k: f64) -> f64 {
        self.amplitude / (1.0 + (k / self.scale).powf(self.inner)).powf(self.outer)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// True spectrum; drawn from by `synth`, compared against elsewhere.
    pub truth: Option<PowerLaw>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    /// A built-in label or `custom`.
    pub function: String,
    pub breakpoints: Option<Vec<f64>>,
    pub coefficients: Option<Vec<Vec<f64>>>,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self {
            function: "identity".into(),
            breakpoints: None,
            coefficients: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponseConfig {
    #[default]
    Identity,
    /// Pixels from `mask_file` (0/1 per pixel) or kept at random with
    /// probability `keep_fraction`.
    Mask {
        mask_file: Option<PathBuf>,
        keep_fraction: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
    /// Harmonic modes from `modes_file` (flat indices) or one of each
    /// conjugate pair kept with probability `min(1, radial_density / |k|)`.
    FourierSampling {
        modes_file: Option<PathBuf>,
        radial_density: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-datum variance; 0 makes `synth` noiseless.
    pub variance: Option<f64>,
    /// Infer the noise under an inverse-gamma prior.
    pub estimate: Option<NoiseEstimation>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub file: Option<PathBuf>,
    /// True signal, for plots only.
    pub truth_signal: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Samples for the reference KL at the true spectrum.
    pub reference_samples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { reference_samples: 20 }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub samples: Option<usize>,
}

/// The realized response, for writing next to the data.
#[derive(Clone, Debug, PartialEq)]
pub enum ResponseRecord {
    Identity,
    Mask(Vec<bool>),
    Modes(Vec<usize>),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.out);
        fix(&mut self.data.file);
        fix(&mut self.data.truth_signal);
        match &mut self.response {
            ResponseConfig::Mask { mask_file, .. } => fix(mask_file),
            ResponseConfig::FourierSampling { modes_file, .. } => fix(modes_file),
            ResponseConfig::Identity => {}
        }
    }

    /// Applies the overrides and validates the result.
    pub fn finish(mut self, o: &Overrides) -> Result<Self> {
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.iterations {
            self.inference.outer_iterations = n;
        }
        if let Some(n) = o.samples {
            self.inference.samples = SampleSchedule::constant(n);
        }
        self.inference.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let field = |name: &str, e: ncf_core::Error| CliError::config(format!("{name}: {e}"));
        self.grid().map_err(|e| field("grid", e))?;
        if let BinningConfig::Logarithmic { bins } = self.binning {
            if bins < 2 {
                return Err(CliError::config("binning.bins must be at least 2"));
            }
        }
        if let Some(t) = &self.spectrum.truth {
            let ok = [t.amplitude, t.scale].iter().all(|v| *v > 0.0 && v.is_finite())
                && t.inner.is_finite()
                && t.outer.is_finite();
            if !ok {
                return Err(CliError::config("spectrum.truth: amplitude and scale must be positive"));
            }
        }
        self.local_function().map_err(|e| field("nonlinearity", e))?;
        match &self.response {
            ResponseConfig::Mask {
                mask_file,
                keep_fraction,
                ..
            } => match (mask_file, keep_fraction) {
                (Some(_), None) => {}
                (None, Some(f)) if *f > 0.0 && *f <= 1.0 => {}
                (None, Some(_)) => return Err(CliError::config("response.keep_fraction must lie in (0, 1]")),
                _ => return Err(CliError::config("response: give exactly one of mask_file and keep_fraction")),
            },
            ResponseConfig::FourierSampling {
                modes_file,
                radial_density,
                ..
            } => match (modes_file, radial_density) {
                (Some(_), None) => {}
                (None, Some(d)) if *d > 0.0 && d.is_finite() => {}
                (None, Some(_)) => return Err(CliError::config("response.radial_density must be positive")),
                _ => {
                    return Err(CliError::config(
                        "response: give exactly one of modes_file and radial_density",
                    ))
                }
            },
            ResponseConfig::Identity => {}
        }
        if let Some(v) = self.noise.variance {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::config("noise.variance must be non-negative"));
            }
        }
        if let Some(e) = &self.noise.estimate {
            e.validate().map_err(|e| field("noise.estimate", e))?;
        }
        self.inference.validate().map_err(|e| field("inference", e))?;
        if self.legacy.probes == 0 {
            return Err(CliError::config("legacy.probes must be at least 1"));
        }
        if self.bench.reference_samples == 0 {
            return Err(CliError::config("bench.reference_samples must be at least 1"));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::config("no output directory: set `out` or pass --out"))
    }

    pub fn grid(&self) -> ncf_core::Result<GridSpace> {
        match &self.grid.pixel_size {
            Some(size) => GridSpace::new(self.grid.shape.clone(), size.clone()),
            None => GridSpace::unit_volume(&self.grid.shape),
        }
    }

    pub fn binning(&self, grid: &GridSpace) -> Result<PowerBinning> {
        Ok(match self.binning {
            BinningConfig::Natural => PowerBinning::natural(&grid.harmonic())?,
            BinningConfig::Logarithmic { bins } => PowerBinning::logarithmic(&grid.harmonic(), bins)?,
        })
    }

    pub fn local_function(&self) -> ncf_core::Result<LocalFunction> {
        let n = &self.nonlinearity;
        if n.function != "custom" {
            return LocalFunction::builtin(&n.function);
        }
        Ok(LocalFunction::Custom(Piecewise::new(
            n.breakpoints.clone().unwrap_or_default(),
            n.coefficients.clone().unwrap_or_default(),
        )?))
    }

    pub fn truth(&self) -> Result<PowerLaw> {
        self.spectrum
            .truth
            .ok_or_else(|| CliError::config("spectrum.truth is required for this command"))
    }

    /// The true spectrum on `binning`.
    pub fn truth_spectrum(&self, binning: &PowerBinning) -> Result<LogSpectrum> {
        let law = self.truth()?;
        Ok(LogSpectrum::from_fn(binning, |k| law.power(k))?)
    }

    pub fn response(&self, ft: &Arc<HarmonicTransform>) -> Result<(Arc<dyn LinearMap>, ResponseRecord)> {
        let grid = ft.grid();
        Ok(match &self.response {
            ResponseConfig::Identity => (Arc::new(IdentityResponse::new(grid)), ResponseRecord::Identity),
            ResponseConfig::Mask {
                mask_file,
                keep_fraction,
                seed,
            } => {
                let keep: Vec<bool> = match (mask_file, keep_fraction) {
                    (Some(path), _) => {
                        let v = read_integers(path)?;
                        if let Some(bad) = v.iter().find(|&&x| x > 1) {
                            return Err(CliError::config(format!("{}: mask entry {bad} is not 0 or 1", path.display())));
                        }
                        v.into_iter().map(|x| x == 1).collect()
                    }
                    (None, Some(f)) => {
                        let mut rng = stream_rng(*seed, StreamPurpose::Synthesis, 1, 0);
                        (0..grid.size()).map(|_| rng.random::<f64>() < *f).collect()
                    }
                    (None, None) => unreachable!("validated"),
                };
                let map = MaskResponse::new(grid, &keep).map_err(|e| CliError::config(format!("response: {e}")))?;
                (Arc::new(map), ResponseRecord::Mask(keep))
            }
            ResponseConfig::FourierSampling {
                modes_file,
                radial_density,
                seed,
            } => {
                let modes = match (modes_file, radial_density) {
                    (Some(path), _) => read_integers(path)?,
                    (None, Some(density)) => {
                        let h = grid.harmonic();
                        let mags = h.mode_magnitudes();
                        let mut rng = stream_rng(*seed, StreamPurpose::Synthesis, 1, 0);
                        (0..h.size())
                            .filter(|&i| h.conjugate_index(i) > i && rng.random::<f64>() < (density / mags[i]).min(1.0))
                            .collect()
                    }
                    (None, None) => unreachable!("validated"),
                };
                let map = FourierSamplingResponse::new(ft.clone(), modes.clone())
                    .map_err(|e| CliError::config(format!("response: {e}")))?;
                (Arc::new(map), ResponseRecord::Modes(modes))
            }
        })
    }

    /// The problem for `data`; an estimated noise starts from the data
    /// variance inside the inference.
    pub fn problem(&self, data: Field) -> Result<Problem> {
        let grid = self.grid()?;
        let ft = Arc::new(HarmonicTransform::new(&grid));
        let binning = Arc::new(self.binning(&grid)?);
        let (response, _) = self.response(&ft)?;
        let m = response.target().size();
        let variance = match (self.noise.variance, &self.noise.estimate) {
            (Some(v), _) if v > 0.0 => v,
            (_, Some(_)) => 1.0,
            _ => return Err(CliError::config("noise.variance must be positive unless noise.estimate is set")),
        };
        let setup = MeasurementSetup::new(response, self.local_function()?, NoiseModel::Fixed(vec![variance; m]))?;
        let smooth = Arc::new(SmoothnessPrior::new(&binning, self.inference.sigma)?);
        Ok(Problem::new(ft, binning, smooth, setup, data)?)
    }

    /// The inference settings including noise estimation.
    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            noise_estimation: self.noise.estimate,
            ..self.inference.clone()
        }
    }

    /// Reads the configured data file for a response with `m` outputs.
    pub fn read_data(&self, m: usize) -> Result<Field> {
        let path = self
            .data
            .file
            .as_ref()
            .ok_or_else(|| CliError::config("data.file is required for this command"))?;
        Ok(Field::read(Space::Data(DataSpace::new(m)?), path)?)
    }
}

/// Whitespace-separated non-negative integers; `#` starts a comment.
fn read_integers(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::config(format!("{}: `{t}` is not a non-negative integer", path.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.finish(&Overrides::default())
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse("[grid]\nshape = [16]\n[noise]\nvariance = 0.5\n").unwrap();
        assert_eq!(cfg.binning, BinningConfig::Natural);
        assert_eq!(cfg.response, ResponseConfig::Identity);
        assert_eq!(cfg.local_function().unwrap(), LocalFunction::Identity);
        assert_eq!(cfg.grid().unwrap().total_volume(), 1.0);
        assert_eq!(cfg.inference.outer_iterations, InferenceConfig::default().outer_iterations);
    }

    #[test]
    fn overrides_win() {
        let cfg: RunConfig = toml::from_str("seed = 1\n[grid]\nshape = [8]\n").unwrap();
        let cfg = cfg
            .finish(&Overrides {
                out: Some("x".into()),
                seed: Some(7),
                iterations: Some(3),
                samples: Some(5),
            })
            .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.inference.seed, 7);
        assert_eq!(cfg.inference.outer_iterations, 3);
        assert_eq!(cfg.inference.samples.count(40), 5);
        assert_eq!(cfg.out_dir().unwrap(), Path::new("x"));
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("[grid]\nshape = [8]\nbogus = 1\n", "bogus"),
            ("[grid]\nshape = [8]\n[noise]\nvariance = -1.0\n", "noise.variance"),
            ("[grid]\nshape = [8]\n[binning]\nkind = \"logarithmic\"\nbins = 1\n", "binning.bins"),
            ("[grid]\nshape = [8]\n[response]\nkind = \"mask\"\n", "mask_file"),
            ("[grid]\nshape = [8]\n[nonlinearity]\nfunction = \"cubic\"\n", "nonlinearity"),
            ("[grid]\nshape = [8, 8, 8]\n", "grid"),
            ("[grid]\nshape = [8]\n[inference]\nsigma = 0.0\n", "inference"),
        ];
        for (text, name) in cases {
            let err = parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(name), "{err} should mention {name}");
        }
    }

    #[test]
    fn inverse_square_power_law() {
        let p = PowerLaw {
            amplitude: 4.0,
            scale: 1.0,
            inner: 1.0,
            outer: 2.0,
        };
        assert_eq!(p.power(0.0), 4.0);
        assert_eq!(p.power(1.0), 1.0);
        assert_eq!(p.power(3.0), 0.25);
    }

    #[test]
    fn custom_piecewise_needs_matching_coefficients() {
        let ok = "[grid]\nshape = [8]\n[nonlinearity]\nfunction = \"custom\"\nbreakpoints = [0.0]\ncoefficients = [[0.0, 0.5], [0.0, 2.0]]\n";
        assert!(matches!(parse(ok).unwrap().local_function().unwrap(), LocalFunction::Custom(_)));
        let bad = "[grid]\nshape = [8]\n[nonlinearity]\nfunction = \"custom\"\nbreakpoints = [0.0]\n";
        assert!(parse(bad).is_err());
    }

    #[test]
    fn random_responses_are_reproducible() {
        let text = "[grid]\nshape = [16, 16]\n[response]\nkind = \"fourier_sampling\"\nradial_density = 3.0\nseed = 4\n";
        let cfg = parse(text).unwrap();
        let ft = Arc::new(HarmonicTransform::new(&cfg.grid().unwrap()));
        let (_, a) = cfg.response(&ft).unwrap();
        let (_, b) = cfg.response(&ft).unwrap();
        assert_eq!(a, b);
        let ResponseRecord::Modes(modes) = a else { panic!("expected modes") };
        let h = ft.harmonic();
        assert!(!modes.is_empty());
        assert!(modes.iter().all(|&m| h.conjugate_index(m) > m));
    }
}
