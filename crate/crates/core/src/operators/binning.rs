//! Isotropic binning of harmonic modes and the per-bin log spectrum.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, HarmonicSpace, Space};

/// Assignment of harmonic pixels to isotropic bins.
///
/// Bins are ordered by increasing `|k|`; bin 0 always holds the zero mode
/// alone.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerBinning {
    harmonic: HarmonicSpace,
    edges: Vec<f64>,
    bin_of_pixel: Vec<usize>,
    counts: Vec<usize>,
    rho: Vec<f64>,
    kappa: Vec<f64>,
}

/// What gets written next to a run so the binning can be reproduced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningRecord {
    pub edges: Vec<f64>,
    pub rho: Vec<f64>,
    pub kappa_centers: Vec<f64>,
    pub mode_counts: Vec<usize>,
}

impl PowerBinning {
    /// One bin per distinct mode magnitude.
    pub fn natural(harmonic: &HarmonicSpace) -> Result<Self> {
        let mut mags = harmonic.mode_magnitudes();
        mags.sort_by(f64::total_cmp);
        let mut distinct: Vec<f64> = Vec::new();
        for m in mags {
            match distinct.last() {
                Some(&last) if (m - last).abs() <= 1e-9 * m.max(1e-300) => {}
                _ => distinct.push(m),
            }
        }
        let mut edges = vec![0.0];
        for w in distinct.windows(2) {
            edges.push(0.5 * (w[0] + w[1]));
        }
        let top = distinct.last().copied().unwrap_or(0.0);
        edges.push(top * (1.0 + 1e-9) + f64::MIN_POSITIVE);
        Self::from_edges(harmonic, edges)
    }

    /// The zero mode plus `nbins` logarithmically spaced bins between the
    /// smallest and largest nonzero magnitude. Empty bins are merged away.
    pub fn logarithmic(harmonic: &HarmonicSpace, nbins: usize) -> Result<Self> {
        if nbins == 0 {
            return Err(Error::invalid("binning", "need at least one nonzero bin"));
        }
        let mags = harmonic.mode_magnitudes();
        let nonzero = mags.iter().copied().filter(|&m| m > 0.0);
        let lo = nonzero.clone().fold(f64::INFINITY, f64::min);
        let hi = nonzero.fold(0.0, f64::max);
        if !lo.is_finite() {
            return Err(Error::invalid("binning", "space has no nonzero modes"));
        }
        let lo = lo * (1.0 - 1e-9);
        let hi = hi * (1.0 + 1e-9);
        let mut edges = vec![0.0];
        for i in 0..=nbins {
            edges.push(lo * (hi / lo).powf(i as f64 / nbins as f64));
        }
        Self::from_edges(harmonic, edges)
    }

    /// Bins `[e_i, e_{i+1})`. The first bin must contain exactly the zero
    /// mode; empty bins are dropped by merging their upper edge.
    pub fn from_edges(harmonic: &HarmonicSpace, edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::invalid("binning", "need at least two bins"));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges[0] != 0.0 {
            return Err(Error::invalid(
                "binning",
                "edges must start at 0 and increase strictly",
            ));
        }
        let mags = harmonic.mode_magnitudes();
        let nb = edges.len() - 1;
        let mut raw_bin = Vec::with_capacity(mags.len());
        for &m in &mags {
            // partition_point gives the number of edges <= m
            let b = edges.partition_point(|&e| e <= m);
            if b == 0 || b > nb {
                return Err(Error::invalid(
                    "binning",
                    format!("mode magnitude {m} lies outside the edges"),
                ));
            }
            raw_bin.push(b - 1);
        }
        let mut raw_counts = vec![0usize; nb];
        for &b in &raw_bin {
            raw_counts[b] += 1;
        }
        if raw_counts[0] != 1 {
            return Err(Error::invalid(
                "binning",
                "the first bin must hold the zero mode alone",
            ));
        }

        let mut remap = vec![usize::MAX; nb];
        let mut kept_edges = vec![edges[0]];
        let mut next = 0;
        // an empty bin hands its range to the next kept bin
        for b in 0..nb {
            if raw_counts[b] > 0 {
                remap[b] = next;
                next += 1;
                kept_edges.push(edges[b + 1]);
            }
        }
        let bin_of_pixel: Vec<usize> = raw_bin.iter().map(|&b| remap[b]).collect();
        let mut counts = vec![0usize; next];
        let mut kappa = vec![0.0; next];
        for (&b, &m) in bin_of_pixel.iter().zip(&mags) {
            counts[b] += 1;
            kappa[b] += m;
        }
        for (k, &c) in kappa.iter_mut().zip(&counts) {
            *k /= c as f64;
        }
        let dk = harmonic.cell_volume();
        let rho = counts.iter().map(|&c| c as f64 * dk).collect();
        Ok(Self {
            harmonic: harmonic.clone(),
            edges: kept_edges,
            bin_of_pixel,
            counts,
            rho,
            kappa,
        })
    }

    pub fn harmonic(&self) -> &HarmonicSpace {
        &self.harmonic
    }

    pub fn harmonic_space(&self) -> Space {
        Space::Harmonic(self.harmonic.clone())
    }

    pub fn bin_space(&self) -> Space {
        Space::Bins(self.len())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bin_of_pixel(&self) -> &[usize] {
        &self.bin_of_pixel
    }

    /// Harmonic volume of every bin.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Number of harmonic pixels in every bin.
    pub fn mode_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Mean `|k|` of the member pixels.
    pub fn kappa_centers(&self) -> &[f64] {
        &self.kappa
    }

    pub fn record(&self) -> BinningRecord {
        BinningRecord {
            edges: self.edges.clone(),
            rho: self.rho.clone(),
            kappa_centers: self.kappa.clone(),
            mode_counts: self.counts.clone(),
        }
    }

    /// `P h`: volume-weighted mean of `h` over every bin.
    pub fn project(&self, h: &Field) -> Result<Field> {
        Space::Harmonic(self.harmonic.clone()).ensure_eq(h.space())?;
        let mut sums = vec![Complex64::new(0.0, 0.0); self.len()];
        for (&b, v) in self.bin_of_pixel.iter().zip(h.values()) {
            sums[b] += v;
        }
        for (s, &c) in sums.iter_mut().zip(&self.counts) {
            *s /= c as f64;
        }
        Ok(Field::from_parts_unchecked(self.bin_space(), sums))
    }

    /// `P^† b`: broadcasts bin values to their member pixels.
    pub fn distribute(&self, b: &Field) -> Result<Field> {
        self.bin_space().ensure_eq(b.space())?;
        let values = self.bin_of_pixel.iter().map(|&k| b.values()[k]).collect();
        Ok(Field::from_parts_unchecked(self.harmonic_space(), values))
    }

    /// Per-pixel copy of a real bin vector.
    pub fn broadcast(&self, per_bin: &[f64]) -> Vec<f64> {
        assert_eq!(per_bin.len(), self.len(), "bin vector length");
        self.bin_of_pixel.iter().map(|&k| per_bin[k]).collect()
    }

    /// Plain sum of a real per-pixel quantity over every bin.
    pub fn bin_sum(&self, per_pixel: &[f64]) -> Vec<f64> {
        assert_eq!(per_pixel.len(), self.bin_of_pixel.len(), "pixel vector length");
        let mut out = vec![0.0; self.len()];
        for (&b, &v) in self.bin_of_pixel.iter().zip(per_pixel) {
            out[b] += v;
        }
        out
    }
}

/// Log amplitude spectrum `alpha`, one value per bin. `tau = 2 alpha` and the
/// power `p = exp(tau)` are derived on demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSpectrum {
    alpha: Vec<f64>,
}

impl LogSpectrum {
    pub fn from_alpha(alpha: Vec<f64>) -> Self {
        Self { alpha }
    }

    pub fn from_tau(tau: &[f64]) -> Self {
        Self {
            alpha: tau.iter().map(|t| 0.5 * t).collect(),
        }
    }

    pub fn from_power(power: &[f64]) -> Result<Self> {
        if power.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::invalid("spectrum", "power must be positive and finite"));
        }
        Ok(Self {
            alpha: power.iter().map(|p| 0.5 * p.ln()).collect(),
        })
    }

    pub fn flat(nbins: usize, power: f64) -> Result<Self> {
        Self::from_power(&vec![power; nbins])
    }

    /// Evaluates a power law `p(k)` at the bin centres of `binning`.
    pub fn from_fn(binning: &PowerBinning, p: impl Fn(f64) -> f64) -> Result<Self> {
        let power: Vec<f64> = binning.kappa_centers().iter().map(|&k| p(k)).collect();
        Self::from_power(&power)
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn tau(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| 2.0 * a).collect()
    }

    pub fn power(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| (2.0 * a).exp()).collect()
    }

    pub fn amplitude(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a.exp()).collect()
    }

    pub fn alpha_field(&self) -> Field {
        Field::real_unchecked(Space::Bins(self.len()), self.alpha.iter().copied())
    }

    pub fn from_alpha_field(field: &Field) -> Self {
        Self::from_alpha(field.real_values())
    }
}
