use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Least-squares fit of `log2(ratio)` against a parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySweep {
    pub parameter: String,
    /// `(parameter, ratio)` as measured, including any dropped samples.
    pub samples: Vec<(f64, f64)>,
    pub fitted_log2_slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in `log2` units.
    pub residual: f64,
    /// Samples left out of the fit because the ratio vanished.
    pub dropped: usize,
}

/// Fewest usable samples for a fit.
pub const MIN_SAMPLES: usize = 4;

impl DecaySweep {
    /// Fits the samples with positive finite ratio; a vanishing ratio is
    /// exact decay and carries no slope information.
    pub fn fit(parameter: &str, samples: Vec<(f64, f64)>) -> Result<Self> {
        let pts: Vec<(f64, f64)> =
            samples.iter().filter(|(_, r)| r.is_finite() && *r > 0.0).map(|&(x, r)| (x, r.log2())).collect();
        if pts.len() < MIN_SAMPLES {
            return Err(invalid!(
                "decay fit over {parameter} needs {MIN_SAMPLES} positive samples, got {} of {}",
                pts.len(),
                samples.len()
            ));
        }
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx == 0.0 {
            return Err(invalid!("decay fit over {parameter} needs distinct parameter values"));
        }
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        Ok(Self {
            parameter: parameter.into(),
            dropped: samples.len() - pts.len(),
            samples,
            fitted_log2_slope: slope,
            intercept,
            residual: (rss / m).sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let samples = (1..=6).map(|j| (j as f64, 3.0 * 2f64.powf(-0.5 * j as f64))).collect();
        let s = DecaySweep::fit("s", samples).unwrap();
        assert!((s.fitted_log2_slope + 0.5).abs() < 1e-12);
        assert!((s.intercept - 3f64.log2()).abs() < 1e-12);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn zeros_are_dropped_and_counted() {
        let samples = alloc::vec![(1.0, 0.5), (2.0, 0.25), (3.0, 0.0), (4.0, 0.0625), (5.0, 0.03125)];
        let s = DecaySweep::fit("j", samples).unwrap();
        assert_eq!(s.dropped, 1);
        assert!((s.fitted_log2_slope + 1.0).abs() < 1e-12);
        let few = alloc::vec![(1.0, 0.5), (2.0, 0.0), (3.0, 0.1), (4.0, 0.0)];
        assert!(DecaySweep::fit("j", few).is_err());
    }
}
