//! Gaussian-process surrogate with a Matérn 5/2 kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::stats::{norm_cdf, norm_pdf};

const LENGTHSCALES: [f64; 8] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0];
const NOISES: [f64; 7] = [1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.3];

fn matern52(r: f64, ls: f64) -> f64 {
    let s = 5f64.sqrt() * r / ls;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// GP posterior over standardized observations.
#[derive(Debug, Clone)]
pub struct Surrogate {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    lengthscale: f64,
    /// noise variance relative to the unit signal variance
    noise: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl Surrogate {
    /// Fits by maximizing the log marginal likelihood over a grid of
    /// lengthscales and noise levels.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Option<Self> {
        let mut best: Option<(f64, Self)> = None;
        for &ls in &LENGTHSCALES {
            for &noise in &NOISES {
                if let Some((lml, s)) = Self::fit_with(x, y, ls, noise) {
                    if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                        best = Some((lml, s));
                    }
                }
            }
        }
        best.map(|(_, s)| s)
    }

    /// Fixed hyperparameters; returns the log marginal likelihood as well.
    pub fn fit_with(
        x: &[Vec<f64>],
        y: &[f64],
        lengthscale: f64,
        noise: f64,
    ) -> Option<(f64, Self)> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return None;
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_scale));
        let k = DMatrix::from_fn(n, n, |i, j| {
            matern52(dist(&x[i], &x[j]), lengthscale) + if i == j { noise + 1e-10 } else { 0.0 }
        });
        let chol = k.cholesky()?;
        let alpha = chol.solve(&ys);
        let ln_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let lml = -0.5 * ys.dot(&alpha)
            - 0.5 * ln_det
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some((
            lml,
            Self {
                x: x.to_vec(),
                y_mean,
                y_scale,
                lengthscale,
                noise,
                chol,
                alpha,
            },
        ))
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Posterior mean and variance of the latent function, original units.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let kx = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| matern52(dist(xi, p), self.lengthscale)),
        );
        let mean = kx.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&kx)
            .unwrap_or_else(|| DVector::zeros(self.x.len()));
        let var = (1.0 - v.dot(&v)).max(0.0);
        (
            self.y_mean + self.y_scale * mean,
            var * self.y_scale * self.y_scale,
        )
    }
}

/// Expected improvement below `best` for a minimization problem.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    let gap = best - mean;
    if sd < 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * norm_cdf(z) + sd * norm_pdf(z)).max(0.0)
}
