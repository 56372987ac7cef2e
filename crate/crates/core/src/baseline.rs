//! Least-squares Gaussian fit to observed failure voltages.
//!
//! The comparison method: a normal CDF fitted to the plotting positions
//! `(i - 0.5) / n` of the sorted failure voltages, with a DKW band sized by
//! the number of failures.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::cdf::{CdfCurve, GridSpec};
use crate::error::{Error, Result};
use crate::failure_model::{dkw_band, FailureModel, FitMethod, Provenance};
use crate::stats::{mean, norm_cdf, variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

impl GaussianFit {
    pub fn cdf(&self, v: f64) -> f64 {
        norm_cdf((v - self.mu) / self.sigma)
    }
}

/// Sum of squared differences between Φ((v - μ)/σ) and the plotting positions.
pub fn lse_objective(sorted: &[f64], mu: f64, sigma: f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = (i as f64 + 0.5) / n;
            (norm_cdf((v - mu) / sigma) - p).powi(2)
        })
        .sum()
}

/// Objective on standardized data over (μ, ln σ).
struct Standardized<'a> {
    z: &'a [f64],
}

impl CostFunction for Standardized<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(lse_objective(self.z, p[0], p[1].exp()))
    }
}

/// Fits (μ, σ) by Nelder–Mead from the sample moments.
///
/// The search runs on voltages standardized by their sample mean and
/// standard deviation, so the result moves with shifts and rescaling of the
/// data.
pub fn lse_gaussian_fit(failure_voltages: &[f64]) -> Result<GaussianFit> {
    let n = failure_voltages.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "insufficient failures: the Gaussian fit needs at least 2, got {n}"
        )));
    }
    if failure_voltages.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "failure voltages must be finite".into(),
        ));
    }
    let m = mean(failure_voltages);
    let sd = variance(failure_voltages).sqrt();
    if !(sd > 0.0) || failure_voltages.iter().all(|&v| v == failure_voltages[0]) {
        return Err(Error::InsufficientData(
            "all failure voltages are equal; sigma is not identifiable".into(),
        ));
    }
    let mut z: Vec<f64> = failure_voltages.iter().map(|v| (v - m) / sd).collect();
    z.sort_by(f64::total_cmp);

    let simplex = vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5]];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-30)
        .map_err(|e| Error::Optimization(e.to_string()))?;
    let res = Executor::new(Standardized { z: &z }, solver)
        .configure(|s| s.max_iters(5_000))
        .run()
        .map_err(|e| Error::Optimization(e.to_string()))?;
    let best = res
        .state()
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::Optimization("Nelder-Mead returned no parameters".into()))?;
    // never worse than the moment start
    let (mz, lz) = if lse_objective(&z, best[0], best[1].exp()) <= lse_objective(&z, 0.0, 1.0) {
        (best[0], best[1])
    } else {
        (0.0, 0.0)
    };
    Ok(GaussianFit {
        mu: m + sd * mz,
        sigma: sd * lz.exp(),
        n,
    })
}

/// Fitted CDF on `grid` with a DKW band at confidence `level`.
///
/// The band uses the failure count as its sample size. It stands in for a
/// confidence construction on the fit itself, which the metadata records.
pub fn baseline_band(fit: &GaussianFit, level: f64, grid: &GridSpec) -> Result<FailureModel> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if !(fit.sigma > 0.0) || fit.n < 2 {
        return Err(Error::InvalidArgument("invalid Gaussian fit".into()));
    }
    let points = match grid {
        GridSpec::Explicit(g) => g.clone(),
        GridSpec::Auto { .. } => {
            // span the bulk of the fitted normal
            let lo = fit.mu - 4.0 * fit.sigma;
            let hi = fit.mu + 4.0 * fit.sigma;
            grid.resolve(&[lo, hi])?
        }
    };
    let values = points.iter().map(|&v| fit.cdf(v)).collect();
    let curve = CdfCurve::new(points, values)?;
    let mut model = dkw_band(&curve, fit.n as u64, 1.0 - level)?;
    model.provenance = vec![Provenance::FiniteTesting];
    model.fit_method = FitMethod::GaussianFit;
    Ok(model
        .with_meta(
            "band_construction",
            "dkw around least-squares gaussian fit (substitute)",
        )
        .with_meta("confidence_level", level)
        .with_meta("mu_kv", fit.mu)
        .with_meta("sigma_kv", fit.sigma)
        .with_meta("n_failures", fit.n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_give_midpoint() {
        let f = lse_gaussian_fit(&[40.0, 60.0]).unwrap();
        assert!((f.mu - 50.0).abs() < 1e-6, "{f:?}");
        assert_eq!(f.n, 2);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            lse_gaussian_fit(&[50.0]),
            Err(Error::InsufficientData(_))
        ));
        assert!(lse_gaussian_fit(&[50.0, 50.0, 50.0]).is_err());
    }

    #[test]
    fn optimum_not_worse_than_start() {
        let v = [31.0, 44.0, 45.5, 47.0, 52.0, 58.0, 66.0];
        let f = lse_gaussian_fit(&v).unwrap();
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let start = lse_objective(&s, mean(&v), variance(&v).sqrt());
        assert!(lse_objective(&s, f.mu, f.sigma) <= start + 1e-15);
    }

    #[test]
    fn band_width_at_ninety_percent() {
        let fit = GaussianFit {
            mu: 50.0,
            sigma: 8.0,
            n: 12,
        };
        let m = baseline_band(&fit, 0.9, &GridSpec::default()).unwrap();
        let eps = m.metadata["dkw_epsilon"].as_f64().unwrap();
        assert!((eps - 0.3533).abs() < 1e-4);
        assert_eq!(m.provenance, vec![Provenance::FiniteTesting]);
        let b = m.band.as_ref().unwrap();
        assert!(b.low.iter().chain(&b.high).all(|v| (0.0..=1.0).contains(v)));
    }
}
