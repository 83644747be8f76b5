//! Monotone pixel-wise response functions `f` and their derivatives.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::Field;

/// Piecewise polynomial: `coefficients[i]` (ascending powers) applies on
/// `[breakpoints[i-1], breakpoints[i])`, with open ends outside.
#[derive(Clone, Debug, PartialEq)]
pub struct Piecewise {
    breakpoints: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
}

impl Piecewise {
    pub fn new(breakpoints: Vec<f64>, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        if coefficients.len() != breakpoints.len() + 1 {
            return Err(Error::invalid(
                "piecewise nonlinearity",
                format!(
                    "{} breakpoints need {} coefficient lists, got {}",
                    breakpoints.len(),
                    breakpoints.len() + 1,
                    coefficients.len()
                ),
            ));
        }
        if breakpoints.iter().any(|b| !b.is_finite())
            || breakpoints.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::invalid(
                "piecewise nonlinearity",
                "breakpoints must be finite and strictly increasing",
            ));
        }
        if coefficients.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("piecewise nonlinearity", "coefficients must be finite"));
        }
        let f = Self {
            breakpoints,
            coefficients,
        };
        f.check_monotone()?;
        Ok(f)
    }

    fn piece(&self, x: f64) -> &[f64] {
        &self.coefficients[self.breakpoints.partition_point(|&b| b <= x)]
    }

    fn eval(&self, x: f64) -> f64 {
        self.piece(x).iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn deriv(&self, x: f64) -> f64 {
        let c = self.piece(x);
        c.iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * x + i as f64 * c)
    }

    /// Spot check on a dense grid around the breakpoints.
    fn check_monotone(&self) -> Result<()> {
        let lo = self.breakpoints.first().copied().unwrap_or(0.0) - 10.0;
        let hi = self.breakpoints.last().copied().unwrap_or(0.0) + 10.0;
        let steps = 4000;
        let mut prev = self.eval(lo);
        for i in 1..=steps {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            let v = self.eval(x);
            if v < prev - 1e-12 * prev.abs().max(1.0) || self.deriv(x) < 0.0 {
                return Err(Error::invalid(
                    "piecewise nonlinearity",
                    format!("not monotonically non-decreasing near x = {x}"),
                ));
            }
            prev = v;
        }
        Ok(())
    }
}

/// Catalog of monotone local functions.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalFunction {
    Identity,
    Exponential,
    Tanh,
    /// `x - 1` below 0, `0` on `[0, 1/2)`, `x^2 - x + 1/4` above.
    PaperPiecewise,
    Custom(Piecewise),
}

impl LocalFunction {
    pub const BUILTIN_LABELS: [&'static str; 4] =
        ["identity", "exponential", "paper_piecewise", "tanh"];

    pub fn builtin(label: &str) -> Result<Self> {
        match label {
            "identity" => Ok(Self::Identity),
            "exponential" => Ok(Self::Exponential),
            "paper_piecewise" => Ok(Self::PaperPiecewise),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::UnknownNonlinearity(other.to_string())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Exponential => "exponential",
            Self::Tanh => "tanh",
            Self::PaperPiecewise => "paper_piecewise",
            Self::Custom(_) => "custom",
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Exponential => x.exp(),
            Self::Tanh => x.tanh(),
            Self::PaperPiecewise => {
                if x < 0.0 {
                    x - 1.0
                } else if x < 0.5 {
                    0.0
                } else {
                    x * x - x + 0.25
                }
            }
            Self::Custom(p) => p.eval(x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Exponential => x.exp(),
            Self::Tanh => 1.0 - x.tanh().powi(2),
            Self::PaperPiecewise => {
                if x < 0.0 {
                    1.0
                } else if x == 0.0 {
                    // the kink: any finite value works, the field is never
                    // exactly zero in practice
                    1.0
                } else if x < 0.5 {
                    0.0
                } else {
                    2.0 * x - 1.0
                }
            }
            Self::Custom(p) => p.deriv(x),
        }
    }

    pub fn apply(&self, x: &Field) -> Field {
        x.map_real(|v| self.eval(v))
    }

    pub fn derivative(&self, x: &Field) -> Field {
        x.map_real(|v| self.deriv(v))
    }
}

impl fmt::Display for LocalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpace, Space};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalog() -> Vec<LocalFunction> {
        let mut out: Vec<_> = LocalFunction::BUILTIN_LABELS
            .iter()
            .map(|l| LocalFunction::builtin(l).unwrap())
            .collect();
        out.push(LocalFunction::Custom(
            Piecewise::new(vec![-1.0, 2.0], vec![vec![0.0, 0.5], vec![0.0, 1.0, 0.5], vec![4.0]])
                .unwrap(),
        ));
        out
    }

    fn kinks(f: &LocalFunction) -> Vec<f64> {
        match f {
            LocalFunction::PaperPiecewise => vec![0.0, 0.5],
            LocalFunction::Custom(p) => p.breakpoints.clone(),
            _ => vec![],
        }
    }

    #[test]
    fn builtin_piecewise_values() {
        let f = LocalFunction::builtin("paper_piecewise").unwrap();
        assert_eq!(f.eval(-1.0), -2.0);
        assert_eq!(f.eval(0.25), 0.0);
        assert_eq!(f.eval(1.0), 0.25);
        assert_eq!(f.deriv(2.0), 3.0);
        assert_eq!(f.deriv(0.0), 1.0);
    }

    #[test]
    fn simple_builtins() {
        let id = LocalFunction::builtin("identity").unwrap();
        assert_eq!((id.eval(1.7), id.deriv(-3.0)), (1.7, 1.0));
        let e = LocalFunction::builtin("exponential").unwrap();
        assert_eq!(e.eval(0.0), 1.0);
        assert_eq!(e.deriv(1.3), e.eval(1.3));
        assert!(matches!(
            LocalFunction::builtin("cubic"),
            Err(Error::UnknownNonlinearity(_))
        ));
    }

    #[test]
    fn tanh_derivative_matches_central_differences() {
        let f = LocalFunction::Tanh;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-3.0..3.0);
            let h = 1e-5;
            let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
            assert!((fd - f.deriv(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn derivatives_match_central_differences_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for f in catalog() {
            let ks = kinks(&f);
            let mut checked = 0;
            while checked < 1000 {
                let x: f64 = rng.random_range(-4.0..4.0);
                if ks.iter().any(|k| (x - k).abs() < 1e-3) {
                    continue;
                }
                checked += 1;
                let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                let d = f.deriv(x);
                let err = (fd - d).abs() / d.abs().max(1e-3);
                assert!(err < 1e-5, "{f} at {x}: fd {fd} vs {d}");
            }
        }
    }

    #[test]
    fn monotone_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for f in catalog() {
            for _ in 0..1000 {
                let a: f64 = rng.random_range(-5.0..5.0);
                let b: f64 = rng.random_range(-5.0..5.0);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                assert!(f.eval(lo) <= f.eval(hi), "{f}: {lo} {hi}");
                assert!(f.deriv(lo) >= 0.0);
            }
        }
    }

    #[test]
    fn custom_validation() {
        assert!(Piecewise::new(vec![0.0], vec![vec![1.0]]).is_err());
        assert!(Piecewise::new(vec![1.0, 0.0], vec![vec![0.0]; 3]).is_err());
        // decreasing piece
        assert!(Piecewise::new(vec![0.0], vec![vec![0.0, 1.0], vec![0.0, -1.0]]).is_err());
        // the built-in piecewise function as a custom piecewise polynomial
        let p = Piecewise::new(
            vec![0.0, 0.5],
            vec![vec![-1.0, 1.0], vec![0.0], vec![0.25, -1.0, 1.0]],
        )
        .unwrap();
        let c = LocalFunction::Custom(p);
        for x in [-2.0, -0.1, 0.3, 0.7, 3.0] {
            assert!((c.eval(x) - LocalFunction::PaperPiecewise.eval(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn pixel_wise_application() {
        let g = GridSpace::unit_volume(&[4]).unwrap();
        let x = Field::from_real(Space::Grid(g), vec![-1.0, 0.0, 0.25, 2.0]).unwrap();
        let f = LocalFunction::PaperPiecewise;
        assert_eq!(f.apply(&x).real_values(), vec![-2.0, 0.0, 0.0, 2.25]);
        assert_eq!(f.derivative(&x).real_values(), vec![1.0, 1.0, 0.0, 3.0]);
    }
}
