//! Discretized spaces, fields and the volume-normalized harmonic transform.
//!
//! Position fields carry the pixel volume as inner-product weight, harmonic
//! fields carry the harmonic cell volume `1 / V`. With these weights the
//! harmonic transform `F = dV * DFT` is unitary, so `F^† F = 1` holds exactly
//! and `A A^† = S` needs no stray normalization factors.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod array;
pub use array::{read_array, write_array, ArrayFile, ArrayHeader};

/// Regular periodic grid in one or two dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    shape: Vec<usize>,
    pixel_size: Vec<f64>,
}

impl GridSpace {
    pub fn new(shape: Vec<usize>, pixel_size: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::invalid(
                "grid",
                format!("only 1D and 2D grids are supported, got {} axes", shape.len()),
            ));
        }
        if shape.len() != pixel_size.len() {
            return Err(Error::invalid(
                "grid",
                "shape and pixel_size must have the same number of axes",
            ));
        }
        if shape.contains(&0) {
            return Err(Error::invalid("grid", "pixel counts must be at least 1"));
        }
        if pixel_size.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("grid", "pixel sizes must be positive and finite"));
        }
        Ok(Self { shape, pixel_size })
    }

    /// Grid of total volume one, i.e. pixel size `1/n` along every axis.
    /// Harmonic modes of such a grid sit on integer wave numbers.
    pub fn unit_volume(shape: &[usize]) -> Result<Self> {
        let sizes = shape.iter().map(|&n| 1.0 / n.max(1) as f64).collect();
        Self::new(shape.to_vec(), sizes)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn pixel_size(&self) -> &[f64] {
        &self.pixel_size
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.pixel_size.iter().product()
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volume() * self.size() as f64
    }

    pub fn harmonic(&self) -> HarmonicSpace {
        let spacing = self
            .shape
            .iter()
            .zip(&self.pixel_size)
            .map(|(&n, &d)| 1.0 / (n as f64 * d))
            .collect();
        HarmonicSpace {
            shape: self.shape.clone(),
            mode_spacing: spacing,
        }
    }
}

/// Fourier partner of a [`GridSpace`]. Pixels are stored in FFT order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSpace {
    shape: Vec<usize>,
    mode_spacing: Vec<f64>,
}

impl HarmonicSpace {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mode_spacing(&self) -> &[f64] {
        &self.mode_spacing
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.mode_spacing.iter().product()
    }

    /// Signed integer wave numbers of a pixel, one per axis.
    pub fn signed_mode(&self, index: usize) -> Vec<i64> {
        let mut rem = index;
        let mut out = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            let n = self.shape[axis];
            let i = rem % n;
            rem /= n;
            out[axis] = if i <= n / 2 { i as i64 } else { i as i64 - n as i64 };
        }
        out
    }

    /// Physical mode magnitudes `|k|`, one per pixel.
    pub fn mode_magnitudes(&self) -> Vec<f64> {
        (0..self.size())
            .map(|i| {
                self.signed_mode(i)
                    .iter()
                    .zip(&self.mode_spacing)
                    .map(|(&m, &dk)| (m as f64 * dk).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Index of the pixel holding mode `-k`.
    pub fn conjugate_index(&self, index: usize) -> usize {
        let mut rem = index;
        let mut coords = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            coords[axis] = rem % self.shape[axis];
            rem /= self.shape[axis];
        }
        coords
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&c, &n)| acc * n + (n - c) % n)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSpace {
    length: usize,
}

impl DataSpace {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::invalid("data space", "length must be at least 1"));
        }
        Ok(Self { length })
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }
}

/// Every space a [`Field`] can live on. `Bins` is the unweighted space of
/// per-bin spectral parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Space {
    Grid(GridSpace),
    Harmonic(HarmonicSpace),
    Data(DataSpace),
    Bins(usize),
}

impl Space {
    pub fn size(&self) -> usize {
        match self {
            Space::Grid(g) => g.size(),
            Space::Harmonic(h) => h.size(),
            Space::Data(d) => d.len(),
            Space::Bins(n) => *n,
        }
    }

    /// Inner-product weight of a single pixel.
    pub fn weight(&self) -> f64 {
        match self {
            Space::Grid(g) => g.cell_volume(),
            Space::Harmonic(h) => h.cell_volume(),
            Space::Data(_) | Space::Bins(_) => 1.0,
        }
    }

    pub fn is_harmonic(&self) -> bool {
        matches!(self, Space::Harmonic(_))
    }

    pub(crate) fn ensure_eq(&self, other: &Space) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Grid(g) => write!(f, "grid{:?}", g.shape()),
            Space::Harmonic(h) => write!(f, "harmonic{:?}", h.shape()),
            Space::Data(d) => write!(f, "data[{}]", d.len()),
            Space::Bins(n) => write!(f, "bins[{n}]"),
        }
    }
}

/// Values attached to the pixels of a space.
///
/// Values are stored as complex numbers throughout; fields on grid, data and
/// bin spaces keep a zero imaginary part. All real-valued algebra (solvers,
/// gradients) uses [`Field::dot`], the real part of the weighted inner
/// product, under which Hermitian harmonic fields form a real vector space.
#[derive(Clone, PartialEq)]
pub struct Field {
    space: Space,
    values: Vec<Complex64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Field({}, norm={:.6e})", self.space, self.norm())
    }
}

impl Field {
    pub fn new(space: Space, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != space.size() {
            return Err(Error::invalid(
                "field",
                format!("{} values for {} with {} pixels", values.len(), space, space.size()),
            ));
        }
        Ok(Self { space, values })
    }

    pub fn from_real(space: Space, values: Vec<f64>) -> Result<Self> {
        Self::new(space, values.into_iter().map(Complex64::from).collect())
    }

    pub fn zeros(space: Space) -> Self {
        let n = space.size();
        Self {
            space,
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn constant(space: Space, value: f64) -> Self {
        let n = space.size();
        Self {
            space,
            values: vec![Complex64::from(value); n],
        }
    }

    pub(crate) fn from_parts_unchecked(space: Space, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), space.size());
        Self { space, values }
    }

    pub(crate) fn real_unchecked(space: Space, values: impl IntoIterator<Item = f64>) -> Self {
        Self::from_parts_unchecked(space, values.into_iter().map(Complex64::from).collect())
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Weighted inner product `sum_i w conj(a_i) b_i`.
    pub fn inner_product(&self, other: &Field) -> Result<Complex64> {
        self.space.ensure_eq(&other.space)?;
        let sum: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(sum * self.space.weight())
    }

    /// Real part of the weighted inner product.
    ///
    /// Panics if the spaces differ.
    pub fn dot(&self, other: &Field) -> f64 {
        assert_eq!(self.space, other.space, "dot product across spaces");
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        sum * self.space.weight()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Field {
        Field::from_parts_unchecked(
            self.space.clone(),
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Field) {
        assert_eq!(self.space, x.space, "axpy across spaces");
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += v * a;
        }
    }

    /// Pixel-wise product with real weights.
    pub fn weighted(&self, weights: &[f64]) -> Field {
        assert_eq!(weights.len(), self.len(), "weight vector length");
        Field::from_parts_unchecked(
            self.space.clone(),
            self.values.iter().zip(weights).map(|(v, w)| v * w).collect(),
        )
    }

    /// Pixel-wise map over real parts.
    pub fn map_real(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::real_unchecked(self.space.clone(), self.values.iter().map(|v| f(v.re)))
    }

    /// Drops the imaginary part.
    pub fn real_part(&self) -> Field {
        self.map_real(|x| x)
    }

    /// Index and value of the first non-finite entry.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.values.iter().enumerate().find_map(|(i, v)| {
            if !v.re.is_finite() {
                Some((i, v.re))
            } else if !v.im.is_finite() {
                Some((i, v.im))
            } else {
                None
            }
        })
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        assert_eq!(self.space, rhs.space, "addition across spaces");
        Field::from_parts_unchecked(
            self.space.clone(),
            self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        )
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        assert_eq!(self.space, rhs.space, "subtraction across spaces");
        Field::from_parts_unchecked(
            self.space.clone(),
            self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        )
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.scaled(rhs)
    }
}

/// Weighted inner product of two fields; errors on a space mismatch.
pub fn inner_product(a: &Field, b: &Field) -> Result<Complex64> {
    a.inner_product(b)
}

/// Unitary harmonic transform between a grid and its harmonic space.
///
/// Forward: `(F a)_k = dV sum_x a_x exp(-2 pi i k x)`.
/// Adjoint: `(F^† h)_x = dk sum_k h_k exp(+2 pi i k x)`.
pub struct HarmonicTransform {
    grid: Space,
    harmonic: Space,
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for HarmonicTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HarmonicTransform")
            .field("grid", &self.grid)
            .finish()
    }
}

impl HarmonicTransform {
    pub fn new(grid: &GridSpace) -> Self {
        let mut planner = FftPlanner::new();
        let forward = grid.shape().iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = grid.shape().iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            harmonic: Space::Harmonic(grid.harmonic()),
            grid: Space::Grid(grid.clone()),
            shape: grid.shape().to_vec(),
            forward,
            inverse,
        }
    }

    pub fn grid(&self) -> &GridSpace {
        match &self.grid {
            Space::Grid(g) => g,
            _ => unreachable!(),
        }
    }

    pub fn harmonic(&self) -> &HarmonicSpace {
        match &self.harmonic {
            Space::Harmonic(h) => h,
            _ => unreachable!(),
        }
    }

    pub fn grid_space(&self) -> &Space {
        &self.grid
    }

    pub fn harmonic_space(&self) -> &Space {
        &self.harmonic
    }

    /// Harmonic transform of a position-space field.
    pub fn transform(&self, field: &Field) -> Result<Field> {
        self.grid.ensure_eq(field.space())?;
        Ok(self.forward_unchecked(field))
    }

    /// `F^†` applied to a harmonic field, keeping the imaginary part. For
    /// Hermitian-symmetric input the imaginary part vanishes up to rounding.
    pub fn adjoint_complex(&self, field: &Field) -> Result<Field> {
        self.harmonic.ensure_eq(field.space())?;
        Ok(self.adjoint_complex_unchecked(field))
    }

    pub(crate) fn forward_unchecked(&self, field: &Field) -> Field {
        let mut buf = field.values().to_vec();
        self.fft_nd(&mut buf, &self.forward);
        let w = self.grid.weight();
        buf.iter_mut().for_each(|v| *v *= w);
        Field::from_parts_unchecked(self.harmonic.clone(), buf)
    }

    pub(crate) fn adjoint_complex_unchecked(&self, field: &Field) -> Field {
        let mut buf = field.values().to_vec();
        self.fft_nd(&mut buf, &self.inverse);
        let w = self.harmonic.weight();
        buf.iter_mut().for_each(|v| *v *= w);
        Field::from_parts_unchecked(self.grid.clone(), buf)
    }

    fn fft_nd(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        match self.shape.as_slice() {
            [_] => plans[0].process(buf),
            [rows, cols] => {
                let (rows, cols) = (*rows, *cols);
                // contiguous rows first, then strided columns through a buffer
                plans[1].process(buf);
                let mut column = vec![Complex64::new(0.0, 0.0); rows];
                for c in 0..cols {
                    for r in 0..rows {
                        column[r] = buf[r * cols + c];
                    }
                    plans[0].process(&mut column);
                    for r in 0..rows {
                        buf[r * cols + c] = column[r];
                    }
                }
            }
            _ => unreachable!("grid dimensionality is validated at construction"),
        }
    }
}

/// Draws a white excitation field with unit covariance under the harmonic
/// inner product. Samples are Hermitian symmetric so their position-space
/// image is real. On a unit-volume grid every pixel has `E|xi_k|^2 = 1`.
pub fn draw_white_excitation<R: Rng + ?Sized>(space: &HarmonicSpace, rng: &mut R) -> Field {
    let n = space.size();
    let variance = 1.0 / space.cell_volume();
    let mut values = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let partner = space.conjugate_index(i);
        if partner == i {
            let x: f64 = rng.sample(StandardNormal);
            values[i] = Complex64::new(x * variance.sqrt(), 0.0);
        } else if i < partner {
            let half = (0.5 * variance).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            values[i] = Complex64::new(re * half, im * half);
            values[partner] = values[i].conj();
        }
    }
    Field::from_parts_unchecked(Space::Harmonic(space.clone()), values)
}

/// Draws independent standard normal values scaled by `std_dev` per pixel.
pub fn draw_gaussian_real<R: Rng + ?Sized>(space: Space, std_dev: &[f64], rng: &mut R) -> Field {
    assert_eq!(std_dev.len(), space.size());
    let values: Vec<f64> = std_dev
        .iter()
        .map(|s| s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Field::real_unchecked(space, values)
}
