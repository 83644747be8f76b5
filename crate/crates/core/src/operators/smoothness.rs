use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Field, Space};

use super::{expect_space, LinearMap, PowerBinning};

/// `(1/sigma^2) Delta^† Delta` on the bin space, where `Delta` is the second
/// derivative over `y = ln k` evaluated at interior nonzero-mode bins.
///
/// Each row of `Delta` carries the square root of its local `y` cell width,
/// so `tau^T Delta^† Delta tau` approximates `∫ (tau'')^2 dy`. The zero-mode
/// bin and the two outermost bins have no row.
#[derive(Clone, Debug)]
pub struct SmoothnessPrior {
    space: Space,
    sigma: f64,
    delta: DMatrix<f64>,
    matrix: DMatrix<f64>,
}

impl SmoothnessPrior {
    pub fn new(binning: &PowerBinning, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("smoothness prior", "sigma must be positive"));
        }
        let kappa = binning.kappa_centers();
        let nonzero: Vec<usize> = (0..kappa.len()).filter(|&i| kappa[i] > 0.0).collect();
        if nonzero.len() < 3 {
            return Err(Error::invalid(
                "smoothness prior",
                format!("need at least 3 nonzero-mode bins, have {}", nonzero.len()),
            ));
        }
        let n = kappa.len();
        let mut delta = DMatrix::zeros(n, n);
        for w in nonzero.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            let h1 = kappa[b].ln() - kappa[a].ln();
            let h2 = kappa[c].ln() - kappa[b].ln();
            let width = 0.5 * (h1 + h2);
            let s = width.sqrt() / width;
            delta[(b, a)] = s / h1;
            delta[(b, b)] = -s * (1.0 / h1 + 1.0 / h2);
            delta[(b, c)] = s / h2;
        }
        let matrix = delta.tr_mul(&delta) / (sigma * sigma);
        Ok(Self {
            space: Space::Bins(n),
            sigma,
            delta,
            matrix,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// The unscaled difference operator `Delta`.
    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    /// `(1/sigma^2) Delta^† Delta`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply_slice(&self, v: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(v)).iter().copied().collect()
    }

    /// `v^T (1/sigma^2) Delta^† Delta v`.
    pub fn quadratic(&self, v: &[f64]) -> f64 {
        let dv = &self.delta * DVector::from_column_slice(v);
        dv.norm_squared() / (self.sigma * self.sigma)
    }
}

impl LinearMap for SmoothnessPrior {
    fn domain(&self) -> &Space {
        &self.space
    }
    fn target(&self) -> &Space {
        &self.space
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(&self.space, x, "smoothness prior");
        Field::real_unchecked(self.space.clone(), self.apply_slice(&x.real_values()))
    }
    fn adjoint(&self, y: &Field) -> Field {
        self.apply(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpace;
    use crate::operators::testing::assert_adjoint;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn natural(n: usize) -> PowerBinning {
        PowerBinning::natural(&GridSpace::unit_volume(&[n]).unwrap().harmonic()).unwrap()
    }

    /// Logarithmic bins; centres are close to, not exactly, log-uniform.
    fn log_uniform() -> PowerBinning {
        let h = GridSpace::unit_volume(&[512]).unwrap().harmonic();
        PowerBinning::logarithmic(&h, 12).unwrap()
    }

    #[test]
    fn kernel_contains_constants_and_log_linear() {
        let b = natural(64);
        let k = SmoothnessPrior::new(&b, 1.0).unwrap();
        let c = vec![3.0; b.len()];
        let lin: Vec<f64> = b
            .kappa_centers()
            .iter()
            .map(|&x| if x > 0.0 { 2.0 - 1.7 * x.ln() } else { 11.0 })
            .collect();
        for v in [c, lin] {
            let kv = k.apply_slice(&v);
            let scale = k.matrix().norm() * v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(kv.iter().all(|x| x.abs() < 1e-12 * scale), "{kv:?}");
        }
    }

    #[test]
    fn zero_mode_row_and_column_vanish() {
        let b = natural(32);
        let k = SmoothnessPrior::new(&b, 0.7).unwrap();
        for i in 0..b.len() {
            assert_eq!(k.matrix()[(0, i)], 0.0);
            assert_eq!(k.matrix()[(i, 0)], 0.0);
        }
    }

    #[test]
    fn quadratic_matches_explicit_stencil() {
        let b = log_uniform();
        let kappa = b.kappa_centers().to_vec();
        let sigma = 0.8;
        let k = SmoothnessPrior::new(&b, sigma).unwrap();
        let tau: Vec<f64> = kappa
            .iter()
            .map(|&x| if x > 0.0 { 0.5 * x.ln().powi(2) - x.ln() } else { 0.0 })
            .collect();

        // explicit three-point stencil for unequal spacing, weighted rows
        let n = kappa.len();
        let mut d = DMatrix::<f64>::zeros(n, n);
        for i in 2..n - 1 {
            let (y0, y1, y2) = (kappa[i - 1].ln(), kappa[i].ln(), kappa[i + 1].ln());
            let (h1, h2) = (y1 - y0, y2 - y1);
            let w = 0.5 * (h1 + h2);
            d[(i, i - 1)] = 2.0 / (h1 * (h1 + h2)) * w.sqrt();
            d[(i, i)] = -2.0 / (h1 * h2) * w.sqrt();
            d[(i, i + 1)] = 2.0 / (h2 * (h1 + h2)) * w.sqrt();
        }
        let oracle = d.transpose() * &d * DVector::from_vec(tau.clone()) / (sigma * sigma);
        let got = k.apply_slice(&tau);
        for (a, b) in got.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9 * oracle.norm());
        }
        // the stencil is exact for quadratics: every row reads tau'' = 1
        let dtau = k.delta() * DVector::from_vec(tau);
        for i in 2..n - 1 {
            let w = 0.5 * (kappa[i + 1].ln() - kappa[i - 1].ln());
            assert!((dtau[i] - w.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn too_few_bins_and_bad_sigma() {
        let h = GridSpace::unit_volume(&[4]).unwrap().harmonic();
        let b = PowerBinning::natural(&h).unwrap();
        assert_eq!(b.len(), 3);
        assert!(SmoothnessPrior::new(&b, 1.0).is_err());
        assert!(SmoothnessPrior::new(&natural(16), 0.0).is_err());
    }

    #[test]
    fn self_adjoint() {
        let b = natural(40);
        let k = SmoothnessPrior::new(&b, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_adjoint(&k, &mut rng, 1e-10);
    }

    proptest! {
        #[test]
        fn positive_semidefinite(v in proptest::collection::vec(-5.0f64..5.0, 17)) {
            let b = natural(32);
            let k = SmoothnessPrior::new(&b, 1.3).unwrap();
            let kv = k.apply_slice(&v);
            let q: f64 = v.iter().zip(&kv).map(|(a, b)| a * b).sum();
            prop_assert!(q >= -1e-9 * k.matrix().norm());
            prop_assert!((q - k.quadratic(&v)).abs() <= 1e-9 * q.abs().max(1.0));
        }
    }
}
