use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, HarmonicTransform, Space};

use super::{expect_space, LinearMap, LogSpectrum, PowerBinning};

/// `A = F^† diag(P^† exp(alpha))`, mapping a harmonic excitation to a signal
/// on the grid. `A A^†` is the prior covariance `S`.
#[derive(Clone, Debug)]
pub struct AmplitudeOperator {
    transform: Arc<HarmonicTransform>,
    amplitude: Vec<f64>,
}

impl AmplitudeOperator {
    pub fn new(
        spectrum: &LogSpectrum,
        binning: &PowerBinning,
        transform: Arc<HarmonicTransform>,
    ) -> Result<Self> {
        if spectrum.len() != binning.len() {
            return Err(Error::invalid(
                "amplitude operator",
                format!("{} spectrum values for {} bins", spectrum.len(), binning.len()),
            ));
        }
        if binning.harmonic() != transform.harmonic() {
            return Err(Error::invalid(
                "amplitude operator",
                "binning and transform live on different harmonic spaces",
            ));
        }
        Ok(Self {
            amplitude: binning.broadcast(&spectrum.amplitude()),
            transform,
        })
    }

    /// `exp(alpha)` broadcast to every harmonic pixel.
    pub fn pixel_amplitudes(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn transform(&self) -> &Arc<HarmonicTransform> {
        &self.transform
    }

    /// `diag(P^† exp(alpha)) x`, the harmonic image of the signal.
    pub fn harmonic_signal(&self, x: &Field) -> Field {
        x.weighted(&self.amplitude)
    }
}

impl LinearMap for AmplitudeOperator {
    fn domain(&self) -> &Space {
        self.transform.harmonic_space()
    }
    fn target(&self) -> &Space {
        self.transform.grid_space()
    }
    fn apply(&self, x: &Field) -> Field {
        expect_space(self.domain(), x, "amplitude operator");
        self.transform
            .adjoint_complex_unchecked(&x.weighted(&self.amplitude))
            .real_part()
    }
    fn adjoint(&self, y: &Field) -> Field {
        expect_space(self.target(), y, "amplitude operator adjoint");
        self.transform
            .forward_unchecked(&y.real_part())
            .weighted(&self.amplitude)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpace;
    use crate::operators::testing::{assert_adjoint, random_field};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(n: usize, pixel: f64) -> (Arc<HarmonicTransform>, PowerBinning) {
        let g = GridSpace::new(vec![n], vec![pixel]).unwrap();
        let ft = Arc::new(HarmonicTransform::new(&g));
        let b = PowerBinning::natural(&g.harmonic()).unwrap();
        (ft, b)
    }

    #[test]
    fn unit_and_uniform_amplitudes() {
        let (ft, b) = setup(16, 1.0 / 16.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_field(ft.harmonic_space(), &mut rng);
        let plain = ft.adjoint_complex(&x).unwrap().real_part();

        let a0 = AmplitudeOperator::new(&LogSpectrum::flat(b.len(), 1.0).unwrap(), &b, ft.clone()).unwrap();
        assert!((&a0.apply(&x) - &plain).max_abs() < 1e-14);

        let a2 = AmplitudeOperator::new(
            &LogSpectrum::from_alpha(vec![2f64.ln(); b.len()]),
            &b,
            ft.clone(),
        )
        .unwrap();
        assert!((&a2.apply(&x) - &plain.scaled(2.0)).max_abs() < 1e-13);
    }

    #[test]
    fn rejects_inconsistent_binning() {
        let (ft, b) = setup(16, 1.0 / 16.0);
        assert!(AmplitudeOperator::new(&LogSpectrum::flat(3, 1.0).unwrap(), &b, ft).is_err());
        let (other, _) = setup(8, 1.0 / 8.0);
        assert!(AmplitudeOperator::new(&LogSpectrum::flat(b.len(), 1.0).unwrap(), &b, other).is_err());
    }

    /// Dense `S = F^† diag(p) F` written out from the DFT sum.
    fn dense_covariance(n: usize, dx: f64, power: &[f64]) -> DMatrix<f64> {
        let dk = 1.0 / (n as f64 * dx);
        DMatrix::from_fn(n, n, |x, y| {
            let mut acc = 0.0;
            for k in 0..n {
                let phase = 2.0 * PI * (k as f64) * (x as f64 - y as f64) / n as f64;
                acc += power[k] * phase.cos();
            }
            // (S v)_x = sum_y dV S_xy v_y with S_xy = dk sum_k p_k e^{i k (x-y)}
            acc * dk
        })
    }

    #[test]
    fn amplitude_gram_equals_dense_covariance() {
        let n = 16;
        let dx = 0.3;
        let (ft, b) = setup(n, dx);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = LogSpectrum::from_alpha((0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let a = AmplitudeOperator::new(&spec, &b, ft.clone()).unwrap();
        let pix_power = b.broadcast(&spec.power());
        let s = dense_covariance(n, dx, &pix_power);
        for _ in 0..5 {
            let v = random_field(ft.grid_space(), &mut rng);
            let aav = a.apply(&a.adjoint(&v));
            let dv = nalgebra::DVector::from_vec(v.real_values());
            let sv = &s * dv * dx;
            let diff: f64 = aav
                .real_values()
                .iter()
                .zip(sv.iter())
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(diff < 1e-10 * sv.norm(), "{diff}");
        }
    }

    #[test]
    fn amplitude_is_adjoint_2d() {
        let g = GridSpace::new(vec![8, 6], vec![0.5, 0.25]).unwrap();
        let ft = Arc::new(HarmonicTransform::new(&g));
        let b = PowerBinning::logarithmic(&g.harmonic(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = LogSpectrum::from_alpha((0..b.len()).map(|i| 0.3 * i as f64 - 0.5).collect());
        let a = AmplitudeOperator::new(&spec, &b, ft).unwrap();
        assert_adjoint(&a, &mut rng, 1e-10);
    }
}
