//! Linear operators acting between the spaces of [`crate::grid`].
//!
//! Maps are real-linear: adjoints satisfy `<L x, y> = <x, L^† y>` for the real
//! part of the weighted inner product, which is the product every solver in
//! this crate uses.

mod amplitude;
mod binning;
mod response;
mod smoothness;

pub use amplitude::AmplitudeOperator;
pub use binning::{BinningRecord, LogSpectrum, PowerBinning};
pub use response::{FourierSamplingResponse, IdentityResponse, MaskResponse};
pub use smoothness::SmoothnessPrior;

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Field, HarmonicTransform, Space};

pub trait LinearMap: Send + Sync {
    fn domain(&self) -> &Space;
    fn target(&self) -> &Space;

    /// Panics if `x` does not live on [`LinearMap::domain`].
    fn apply(&self, x: &Field) -> Field;

    /// Panics if `y` does not live on [`LinearMap::target`].
    fn adjoint(&self, y: &Field) -> Field;

    fn try_apply(&self, x: &Field) -> Result<Field> {
        self.domain().ensure_eq(x.space())?;
        Ok(self.apply(x))
    }

    fn try_adjoint(&self, y: &Field) -> Result<Field> {
        self.target().ensure_eq(y.space())?;
        Ok(self.adjoint(y))
    }
}

impl<T: LinearMap + ?Sized> LinearMap for Box<T> {
    fn domain(&self) -> &Space {
        (**self).domain()
    }
    fn target(&self) -> &Space {
        (**self).target()
    }
    fn apply(&self, x: &Field) -> Field {
        (**self).apply(x)
    }
    fn adjoint(&self, y: &Field) -> Field {
        (**self).adjoint(y)
    }
}

impl<T: LinearMap + ?Sized> LinearMap for Arc<T> {
    fn domain(&self) -> &Space {
        (**self).domain()
    }
    fn target(&self) -> &Space {
        (**self).target()
    }
    fn apply(&self, x: &Field) -> Field {
        (**self).apply(x)
    }
    fn adjoint(&self, y: &Field) -> Field {
        (**self).adjoint(y)
    }
}

impl<T: LinearMap + ?Sized> LinearMap for &T {
    fn domain(&self) -> &Space {
        (**self).domain()
    }
    fn target(&self) -> &Space {
        (**self).target()
    }
    fn apply(&self, x: &Field) -> Field {
        (**self).apply(x)
    }
    fn adjoint(&self, y: &Field) -> Field {
        (**self).adjoint(y)
    }
}

pub(crate) fn expect_space(expected: &Space, field: &Field, role: &str) {
    assert!(
        expected == field.space(),
        "{role}: expected a field on {expected}, got one on {}",
        field.space()
    );
}

#[derive(Clone, Debug)]
pub struct IdentityMap {
    space: Space,
}

impl IdentityMap {
    pub fn new(space: Space) -> Self {
        Self { space }
    }
}

impl LinearMap for IdentityMap {
    fn domain(&self) -> &Space {
        &self.space
    }
    fn target(&self) -> &Space {
        &self.space
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(&self.space, x, "identity");
        x.clone()
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.apply(y)
    }
}

/// Pixel-wise multiplication by a real vector. Self-adjoint.
#[derive(Clone, Debug)]
pub struct DiagonalMap {
    space: Space,
    diagonal: Vec<f64>,
}

impl DiagonalMap {
    pub fn new(space: Space, diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.len() != space.size() {
            return Err(Error::invalid(
                "diagonal",
                format!("{} entries for {}", diagonal.len(), space),
            ));
        }
        Ok(Self { space, diagonal })
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }
}

impl LinearMap for DiagonalMap {
    fn domain(&self) -> &Space {
        &self.space
    }
    fn target(&self) -> &Space {
        &self.space
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(&self.space, x, "diagonal");
        x.weighted(&self.diagonal)
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.apply(y)
    }
}

/// `factor * inner`.
pub struct ScaledMap<M> {
    factor: f64,
    inner: M,
}

impl<M: LinearMap> ScaledMap<M> {
    pub fn new(factor: f64, inner: M) -> Self {
        Self { factor, inner }
    }
}

impl<M: LinearMap> LinearMap for ScaledMap<M> {
    fn domain(&self) -> &Space {
        self.inner.domain()
    }
    fn target(&self) -> &Space {
        self.inner.target()
    }
    fn apply(&self, x: &Field) -> Field {
        self.inner.apply(x).scaled(self.factor)
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.inner.adjoint(y).scaled(self.factor)
    }
}

/// `outer ∘ inner`.
pub struct ComposedMap<A, B> {
    outer: A,
    inner: B,
}

impl<A: LinearMap, B: LinearMap> ComposedMap<A, B> {
    pub fn new(outer: A, inner: B) -> Result<Self> {
        outer.domain().ensure_eq(inner.target())?;
        Ok(Self { outer, inner })
    }
}

impl<A: LinearMap, B: LinearMap> LinearMap for ComposedMap<A, B> {
    fn domain(&self) -> &Space {
        self.inner.domain()
    }
    fn target(&self) -> &Space {
        self.outer.target()
    }
    fn apply(&self, x: &Field) -> Field {
        self.outer.apply(&self.inner.apply(x))
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.inner.adjoint(&self.outer.adjoint(y))
    }
}

/// `a + b`.
pub struct SumMap<A, B> {
    a: A,
    b: B,
}

impl<A: LinearMap, B: LinearMap> SumMap<A, B> {
    pub fn new(a: A, b: B) -> Result<Self> {
        a.domain().ensure_eq(b.domain())?;
        a.target().ensure_eq(b.target())?;
        Ok(Self { a, b })
    }
}

impl<A: LinearMap, B: LinearMap> LinearMap for SumMap<A, B> {
    fn domain(&self) -> &Space {
        self.a.domain()
    }
    fn target(&self) -> &Space {
        self.a.target()
    }
    fn apply(&self, x: &Field) -> Field {
        &self.a.apply(x) + &self.b.apply(x)
    }
    fn adjoint(&self, y: &Field) -> Field {
        &self.a.adjoint(y) + &self.b.adjoint(y)
    }
}

/// The adjoint of a map, as a map.
pub struct AdjointMap<M>(pub M);

impl<M: LinearMap> LinearMap for AdjointMap<M> {
    fn domain(&self) -> &Space {
        self.0.target()
    }
    fn target(&self) -> &Space {
        self.0.domain()
    }
    fn apply(&self, x: &Field) -> Field {
        self.0.adjoint(x)
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.0.apply(y)
    }
}

/// A real matrix in raw pixel coordinates between two real spaces.
#[derive(Clone, Debug)]
pub struct DenseMap {
    domain: Space,
    target: Space,
    matrix: DMatrix<f64>,
}

impl DenseMap {
    pub fn new(domain: Space, target: Space, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != target.size() || matrix.ncols() != domain.size() {
            return Err(Error::invalid(
                "dense map",
                format!(
                    "{}x{} matrix between {} and {}",
                    matrix.nrows(),
                    matrix.ncols(),
                    domain,
                    target
                ),
            ));
        }
        if domain.is_harmonic() || target.is_harmonic() {
            return Err(Error::invalid("dense map", "harmonic spaces are not real"));
        }
        Ok(Self {
            domain,
            target,
            matrix,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearMap for DenseMap {
    fn domain(&self) -> &Space {
        &self.domain
    }
    fn target(&self) -> &Space {
        &self.target
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(&self.domain, x, "dense map");
        let v = nalgebra::DVector::from_vec(x.real_values());
        Field::real_unchecked(self.target.clone(), (&self.matrix * v).iter().copied())
    }
    fn adjoint(&self, y: &Field) -> Field {
        expect_space(&self.target, y, "dense map adjoint");
        let v = nalgebra::DVector::from_vec(y.real_values());
        let ratio = self.target.weight() / self.domain.weight();
        Field::real_unchecked(
            self.domain.clone(),
            (self.matrix.tr_mul(&v) * ratio).iter().copied(),
        )
    }
}

/// Raw matrix of a map between real spaces, one column per unit vector.
pub fn materialize(map: &dyn LinearMap) -> Result<DMatrix<f64>> {
    if map.domain().is_harmonic() || map.target().is_harmonic() {
        return Err(Error::invalid(
            "materialize",
            "only maps between real spaces have a real matrix",
        ));
    }
    let n = map.domain().size();
    let m = map.target().size();
    let mut out = DMatrix::zeros(m, n);
    let mut unit = Field::zeros(map.domain().clone());
    for j in 0..n {
        unit.values_mut()[j] = Complex64::new(1.0, 0.0);
        let col = map.apply(&unit);
        for (i, v) in col.values().iter().enumerate() {
            out[(i, j)] = v.re;
        }
        unit.values_mut()[j] = Complex64::new(0.0, 0.0);
    }
    Ok(out)
}

/// The harmonic transform `F` as a map from the grid to its harmonic space.
/// The adjoint keeps only the real part, which makes it the exact real-linear
/// adjoint for arbitrary harmonic input.
#[derive(Clone, Debug)]
pub struct FourierMap {
    transform: Arc<HarmonicTransform>,
}

impl FourierMap {
    pub fn new(transform: Arc<HarmonicTransform>) -> Self {
        Self { transform }
    }
}

impl LinearMap for FourierMap {
    fn domain(&self) -> &Space {
        self.transform.grid_space()
    }
    fn target(&self) -> &Space {
        self.transform.harmonic_space()
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(self.domain(), x, "harmonic transform");
        self.transform.forward_unchecked(&x.real_part())
    }
    fn adjoint(&self, y: &Field) -> Field {
        expect_space(self.target(), y, "harmonic transform adjoint");
        self.transform.adjoint_complex_unchecked(y).real_part()
    }
}

/// Checks `<L x, y> = <x, L^† y>` for the given pair and returns the
/// relative discrepancy.
pub fn adjointness_error(map: &dyn LinearMap, x: &Field, y: &Field) -> f64 {
    let lhs = map.apply(x).dot(y);
    let rhs = x.dot(&map.adjoint(y));
    let scale = map.apply(x).norm() * y.norm();
    (lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE)
}
