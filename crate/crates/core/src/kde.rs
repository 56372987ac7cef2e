//! Gaussian kernel density estimate with a full-covariance kernel.
//!
//! Bandwidth follows Silverman's multivariate rule
//! `h = (4 / ((d + 2) n))^(1 / (d + 4))` with kernel covariance `h²Σ`.
//! Centers are shrunk towards the sample mean by `a = sqrt(1 - h²)` so the
//! mixture keeps the sample covariance instead of inflating it.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianKde {
    dim: usize,
    bandwidth: f64,
    shrink: f64,
    /// Lower Cholesky factor of the sample covariance, row-major.
    chol: Vec<f64>,
    /// Centers in whitened coordinates.
    white_centers: Vec<Vec<f64>>,
    mean: Vec<f64>,
    ln_norm: f64,
}

pub fn silverman_bandwidth(dim: usize, n: usize) -> f64 {
    (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0))
}

impl GaussianKde {
    /// Fits on at most `max_centers` evenly spaced samples.
    pub fn fit(samples: &[Vec<f64>], max_centers: usize) -> Result<Self> {
        if samples.len() < 2 || max_centers < 2 {
            return Err(Error::InvalidArgument(
                "KDE needs at least two samples".into(),
            ));
        }
        let dim = samples[0].len();
        if dim == 0 || samples.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidArgument(
                "KDE samples must share a positive dimension".into(),
            ));
        }
        let step = samples.len().div_ceil(max_centers);
        let pts: Vec<&Vec<f64>> = samples.iter().step_by(step).collect();
        let n = pts.len();
        let mean: Vec<f64> = (0..dim)
            .map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for p in &pts {
            let v = DVector::from_iterator(dim, p.iter().zip(&mean).map(|(x, m)| x - m));
            cov += &v * v.transpose();
        }
        cov /= (n - 1) as f64;
        let floor = 1e-9 * (cov.trace() / dim as f64).max(1e-12);
        for i in 0..dim {
            cov[(i, i)] += floor;
        }
        let l = cov
            .cholesky()
            .ok_or_else(|| Error::Inference("KDE covariance is not positive definite".into()))?
            .l();
        let h = silverman_bandwidth(dim, n).min(0.999);
        let a = (1.0 - h * h).sqrt();
        let white_centers = pts
            .iter()
            .map(|p| {
                let v = DVector::from_iterator(dim, p.iter().zip(&mean).map(|(x, m)| a * (x - m)));
                l.solve_lower_triangular(&v)
                    .expect("non-singular factor")
                    .as_slice()
                    .to_vec()
            })
            .collect();
        let ln_det_l: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
        let ln_norm = -(n as f64).ln()
            - dim as f64 * h.ln()
            - ln_det_l
            - 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln();
        let mut chol = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                chol.push(l[(i, j)]);
            }
        }
        Ok(Self {
            dim,
            bandwidth: h,
            shrink: a,
            chol,
            white_centers,
            mean,
            ln_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_centers(&self) -> usize {
        self.white_centers.len()
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.chol[i * self.dim + j]
    }

    fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut s = x[i] - self.mean[i];
            for (j, uj) in u.iter().enumerate().take(i) {
                s -= self.l(i, j) * uj;
            }
            u[i] = s / self.l(i, i);
        }
        u
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let u = self.whiten(x);
        let inv_h2 = 1.0 / (self.bandwidth * self.bandwidth);
        let mut terms = Vec::with_capacity(self.white_centers.len());
        let mut top = f64::NEG_INFINITY;
        for c in &self.white_centers {
            let q: f64 = u.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            let t = -0.5 * q * inv_h2;
            top = top.max(t);
            terms.push(t);
        }
        let s: f64 = terms.iter().map(|t| (t - top).exp()).sum();
        top + s.ln() + self.ln_norm
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let c = &self.white_centers[rng.random_range(0..self.white_centers.len())];
        let u: Vec<f64> = c
            .iter()
            .map(|v| v + self.bandwidth * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (0..self.dim)
            .map(|i| self.mean[i] + (0..=i).map(|j| self.l(i, j) * u[j]).sum::<f64>())
            .collect()
    }

    /// Shrinkage factor applied to the centers.
    pub fn shrink(&self) -> f64 {
        self.shrink
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn gaussian_samples(n: usize) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(1);
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                vec![1.0 + 2.0 * a, -1.0 + a + 0.5 * b]
            })
            .collect()
    }

    #[test]
    fn bandwidth_rule() {
        assert!((silverman_bandwidth(1, 100) - (4.0f64 / 300.0).powf(0.2)).abs() < 1e-15);
    }

    #[test]
    fn preserves_moments() {
        let kde = GaussianKde::fit(&gaussian_samples(4000), 1000).unwrap();
        assert_eq!(kde.n_centers(), 1000);
        let mut rng = rng_from_seed(2);
        let draws: Vec<Vec<f64>> = (0..40_000).map(|_| kde.sample(&mut rng)).collect();
        let col = |j: usize| draws.iter().map(|d| d[j]).collect::<Vec<_>>();
        let (x, y) = (col(0), col(1));
        assert!((crate::stats::mean(&x) - 1.0).abs() < 0.1);
        assert!((crate::stats::variance(&x) - 4.0).abs() < 0.3);
        assert!((crate::stats::variance(&y) - 1.25).abs() < 0.1);
        let (mx, my) = (crate::stats::mean(&x), crate::stats::mean(&y));
        let cov = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - mx) * (b - my))
            .sum::<f64>()
            / (x.len() - 1) as f64;
        assert!((cov - 2.0).abs() < 0.2);
    }

    #[test]
    fn density_integrates_to_one_in_1d() {
        let s: Vec<Vec<f64>> = gaussian_samples(300)
            .into_iter()
            .map(|v| vec![v[0]])
            .collect();
        let kde = GaussianKde::fit(&s, 300).unwrap();
        let (lo, hi, n) = (-15.0, 17.0, 6400);
        let dx = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| kde.ln_pdf(&[lo + (i as f64 + 0.5) * dx]).exp() * dx)
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
}
