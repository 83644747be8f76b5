//! Pixel-wise posterior summaries from a sample set.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{PosteriorState, Problem, SampleSet};
use crate::nonlinearity::LocalFunction;
use crate::operators::LinearMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `<A xi>`.
    pub mean_signal: Vec<f64>,
    /// `<f(A xi)>`.
    pub mean_nonlinear: Vec<f64>,
    /// `<(A (xi - t))^2>`.
    pub variance: Vec<f64>,
    /// `std(e^s) / mean(e^s)`, for the exponential nonlinearity only.
    pub relative_error: Option<Vec<f64>>,
}

pub fn posterior_moments(problem: &Problem, state: &PosteriorState, samples: &SampleSet) -> Result<Moments> {
    let amp = problem.amplitude(&state.spectrum)?;
    let f = problem.setup().nonlinearity();
    let mean_s = amp.apply(&state.t).real_values();
    let n = mean_s.len();
    let count = samples.len() as f64;
    let signals: Vec<Vec<f64>> = samples.iter().map(|xi| amp.apply(xi).real_values()).collect();
    let mut mean_signal = vec![0.0; n];
    let mut mean_nonlinear = vec![0.0; n];
    let mut variance = vec![0.0; n];
    for s in &signals {
        for i in 0..n {
            mean_signal[i] += s[i] / count;
            mean_nonlinear[i] += f.eval(s[i]) / count;
            variance[i] += (s[i] - mean_s[i]).powi(2) / count;
        }
    }
    let relative_error = matches!(f, LocalFunction::Exponential).then(|| {
        (0..n)
            .map(|i| {
                let m = mean_nonlinear[i];
                let var = signals.iter().map(|s| (f.eval(s[i]) - m).powi(2)).sum::<f64>() / count;
                if m > 0.0 {
                    var.sqrt() / m
                } else {
                    0.0
                }
            })
            .collect()
    });
    Ok(Moments {
        mean_signal,
        mean_nonlinear,
        variance,
        relative_error,
    })
}
