//! Instrument responses mapping a grid signal into a data space.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{DataSpace, Field, GridSpace, HarmonicTransform, Space};

use super::{expect_space, LinearMap};

/// Every grid pixel is one datum.
#[derive(Clone, Debug)]
pub struct IdentityResponse {
    grid: Space,
    data: Space,
}

impl IdentityResponse {
    pub fn new(grid: &GridSpace) -> Self {
        Self {
            data: Space::Data(DataSpace::new(grid.size()).expect("grids are nonempty")),
            grid: Space::Grid(grid.clone()),
        }
    }
}

impl LinearMap for IdentityResponse {
    fn domain(&self) -> &Space {
        &self.grid
    }
    fn target(&self) -> &Space {
        &self.data
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(&self.grid, x, "identity response");
        Field::real_unchecked(self.data.clone(), x.values().iter().map(|v| v.re))
    }
    fn adjoint(&self, y: &Field) -> Field {
        expect_space(&self.data, y, "identity response adjoint");
        let inv = 1.0 / self.grid.weight();
        Field::real_unchecked(self.grid.clone(), y.values().iter().map(|v| v.re * inv))
    }
}

/// Restriction of the signal to a subset of pixels.
#[derive(Clone, Debug)]
pub struct MaskResponse {
    grid: Space,
    data: Space,
    kept: Vec<usize>,
}

impl MaskResponse {
    pub fn new(grid: &GridSpace, keep: &[bool]) -> Result<Self> {
        if keep.len() != grid.size() {
            return Err(Error::invalid(
                "mask",
                format!("{} flags for {} pixels", keep.len(), grid.size()),
            ));
        }
        let kept: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        if kept.is_empty() {
            return Err(Error::invalid("mask", "no pixel is kept"));
        }
        Ok(Self {
            grid: Space::Grid(grid.clone()),
            data: Space::Data(DataSpace::new(kept.len())?),
            kept,
        })
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }
}

impl LinearMap for MaskResponse {
    fn domain(&self) -> &Space {
        &self.grid
    }
    fn target(&self) -> &Space {
        &self.data
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(&self.grid, x, "mask response");
        Field::real_unchecked(self.data.clone(), self.kept.iter().map(|&i| x.values()[i].re))
    }
    fn adjoint(&self, y: &Field) -> Field {
        expect_space(&self.data, y, "mask response adjoint");
        let inv = 1.0 / self.grid.weight();
        let mut out = vec![0.0; self.grid.size()];
        for (&i, v) in self.kept.iter().zip(y.values()) {
            out[i] = v.re * inv;
        }
        Field::real_unchecked(self.grid.clone(), out)
    }
}

/// Harmonic transform followed by a read-out of selected modes. Each mode
/// contributes two data points, its real and imaginary part.
#[derive(Clone, Debug)]
pub struct FourierSamplingResponse {
    transform: Arc<HarmonicTransform>,
    data: Space,
    modes: Vec<usize>,
}

impl FourierSamplingResponse {
    pub fn new(transform: Arc<HarmonicTransform>, modes: Vec<usize>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("fourier sampling", "no mode is sampled"));
        }
        let n = transform.harmonic().size();
        if let Some(&bad) = modes.iter().find(|&&m| m >= n) {
            return Err(Error::invalid(
                "fourier sampling",
                format!("mode index {bad} outside a space of {n} modes"),
            ));
        }
        Ok(Self {
            data: Space::Data(DataSpace::new(2 * modes.len())?),
            transform,
            modes,
        })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    /// Places the (re, im) pairs at their modes without any weighting.
    /// Undoes `apply` when every mode is sampled.
    pub fn to_harmonic(&self, y: &Field) -> Field {
        expect_space(&self.data, y, "fourier sampling data");
        let mut h = Field::zeros(self.transform.harmonic_space().clone());
        for (j, &m) in self.modes.iter().enumerate() {
            let v = y.values();
            h.values_mut()[m] += Complex64::new(v[2 * j].re, v[2 * j + 1].re);
        }
        h
    }
}

impl LinearMap for FourierSamplingResponse {
    fn domain(&self) -> &Space {
        self.transform.grid_space()
    }
    fn target(&self) -> &Space {
        &self.data
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(self.domain(), x, "fourier sampling");
        let h = self.transform.forward_unchecked(&x.real_part());
        let mut out = Vec::with_capacity(2 * self.modes.len());
        for &m in &self.modes {
            out.push(h.values()[m].re);
            out.push(h.values()[m].im);
        }
        Field::real_unchecked(self.data.clone(), out)
    }
    fn adjoint(&self, y: &Field) -> Field {
        let h = self.to_harmonic(y);
        let inv = 1.0 / self.transform.harmonic_space().weight();
        self.transform
            .adjoint_complex_unchecked(&h.scaled(inv))
            .real_part()
    }
}
