//! Gaussian completion baseline: squared loss on the raw labels with the
//! same nuclear-norm solver, plus binning to turn the fitted real matrix
//! into class probabilities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::loss::SliceProblem;
use crate::solver::{solve_slice, solve_slice_from, FitReport, SolverConfig};
use crate::tensor::{AtomicDecomposition, GroupedObservations, ObservationSet};

/// Residual scale estimates are floored here so binning never divides by
/// zero on interpolating fits.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// A fitted Gaussian baseline: one real-valued matrix and a residual
/// standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianFit {
    pub report: FitReport,
    /// Root mean squared training residual, floored at [`SIGMA_FLOOR`].
    pub sigma_hat: f64,
    pub classes: usize,
}

impl GaussianFit {
    pub fn decomposition(&self) -> &AtomicDecomposition {
        &self.report.decomposition
    }

    /// Class probabilities at one entry of the fitted matrix.
    pub fn class_probs(&self, entry: (u32, u32)) -> Result<Vec<f64>> {
        let x = self.decomposition().entry_values(&[entry])?[0];
        gaussian_class_probs(x, self.sigma_hat, self.classes)
    }
}

/// Fits the squared-loss problem and estimates the residual scale.
pub fn fit_gaussian(observations: &ObservationSet, config: &SolverConfig) -> Result<GaussianFit> {
    if observations.is_empty() {
        return Err(Error::domain("observation set is empty"));
    }
    let grouped = observations.grouped();
    fit_gaussian_grouped(&grouped, config, None)
}

pub(crate) fn fit_gaussian_grouped(
    grouped: &GroupedObservations,
    config: &SolverConfig,
    warm: Option<&AtomicDecomposition>,
) -> Result<GaussianFit> {
    let problem = SliceProblem::squared(grouped)?;
    let report = match warm {
        Some(start) => solve_slice_from(&problem, config, start)?,
        None => solve_slice(&problem, config)?,
    };
    // The squared risk is (1/2n) * sum of squared residuals, so the mean
    // squared residual is exactly twice the final risk.
    let entries: Vec<f64> = {
        let mut w = vec![0.0; problem.active_len()];
        report.decomposition.accumulate_entries_split(
            problem.entry_rows(),
            problem.entry_cols(),
            &mut w,
        );
        w
    };
    let risk = problem.objective(&entries)?;
    let sigma_hat = (2.0 * risk).sqrt().max(SIGMA_FLOOR);
    Ok(GaussianFit { report, sigma_hat, classes: grouped.classes() })
}

/// Probability of each class under `Y ~ Normal(x, sigma^2)` binned at the
/// half-integer thresholds between classes; the outer bins absorb the
/// tails.
pub fn gaussian_class_probs(x: f64, sigma: f64, classes: usize) -> Result<Vec<f64>> {
    if classes < 2 {
        return Err(Error::structural("need at least two classes"));
    }
    if !x.is_finite() {
        return Err(Error::domain("fitted value is not finite"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::domain("sigma must be positive and finite"));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal is valid");
    let cdf_at = |threshold: f64| normal.cdf((threshold - x) / sigma);
    let mut probs = Vec::with_capacity(classes);
    let mut lower = 0.0;
    for j in 1..classes {
        let upper = cdf_at(j as f64 + 0.5);
        probs.push((upper - lower).max(0.0));
        lower = upper;
    }
    probs.push((1.0 - lower).max(0.0));
    Ok(probs)
}
