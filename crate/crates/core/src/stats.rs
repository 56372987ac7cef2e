//! Scalar distribution helpers: standard normal functions, the logistic
//! link, and a truncated normal with exact rejection sampling.

use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// `ln(Φ(b) − Φ(a))` for `a < b`, evaluated on the tail that keeps precision.
pub fn ln_norm_mass(a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if a > 0.0 {
        // upper tail: Q(a) - Q(b)
        let qa = 0.5 * erfc(a / std::f64::consts::SQRT_2);
        let qb = 0.5 * erfc(b / std::f64::consts::SQRT_2);
        (qa - qb).ln()
    } else if b < 0.0 {
        ln_norm_mass(-b, -a)
    } else {
        (norm_cdf(b) - norm_cdf(a)).ln()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`, stable for large |x|.
pub fn ln_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `ln Φ(x)`, stable in the lower tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -5.0 {
        norm_cdf(x).ln()
    } else {
        // asymptotic series for the Mills ratio
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// Normal distribution with mean `mu` and sd `sigma`, truncated to `(low, high)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, low: f64, high: f64) -> Result<Self> {
        if !(low < high) {
            return Err(Error::InvalidArgument(format!(
                "truncated normal needs low < high, got ({low}, {high})"
            )));
        }
        if !(sigma >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "truncated normal needs finite mu and sigma >= 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            low,
            high,
        })
    }

    fn standardized(&self) -> (f64, f64) {
        (
            (self.low - self.mu) / self.sigma,
            (self.high - self.mu) / self.sigma,
        )
    }

    /// Log density; `-inf` outside the support. Degenerate scale (sigma = 0)
    /// has no density and reports `-inf` everywhere.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > self.low && x < self.high) || self.sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = self.standardized();
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - LN_SQRT_2PI - self.sigma.ln() - ln_norm_mass(a, b)
    }

    /// Inverse CDF at `u` in (0, 1), computed on the tail that keeps
    /// precision.
    pub fn quantile(&self, u: f64) -> f64 {
        if self.sigma <= 0.0 || !(self.sigma.is_finite()) {
            return self.mu.clamp(self.low, self.high);
        }
        let (a, b) = self.standardized();
        let z = std_truncated_quantile(a, b, u.clamp(0.0, 1.0));
        (self.mu + self.sigma * z).clamp(self.low, self.high)
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma <= 0.0 || !(self.sigma.is_finite()) {
            return self.mu.clamp(self.low, self.high);
        }
        let (a, b) = self.standardized();
        let z = sample_std_truncated(a, b, rng);
        (self.mu + self.sigma * z).clamp(self.low, self.high)
    }
}

fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Quantile of a standard normal truncated to `(a, b)`.
pub fn std_truncated_quantile(a: f64, b: f64, u: f64) -> f64 {
    if b <= 0.0 {
        return -std_truncated_quantile(-b, -a, 1.0 - u);
    }
    if a < 0.0 {
        let (pa, pb) = (norm_cdf(a), norm_cdf(b));
        return norm_quantile(pa + u * (pb - pa)).clamp(a, b);
    }
    let (qa, qb) = (upper_tail(a), upper_tail(b));
    let q = qa - u * (qa - qb);
    if qa > 1e-300 && q > 0.0 {
        return (-norm_quantile(q)).clamp(a, b);
    }
    // far tail: the truncated normal is close to a + Exp(a)
    let w = if b.is_finite() {
        -(-a * (b - a)).exp_m1()
    } else {
        1.0
    };
    (a - (-u * w).ln_1p() / a).clamp(a, b)
}

/// Exact sampler for a standard normal truncated to `(a, b)`.
///
/// Picks between normal, uniform and translated-exponential rejection
/// depending on where the interval sits (Robert, 1995).
pub fn sample_std_truncated<R: rand::Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    debug_assert!(a < b);
    if b < 0.0 {
        return -sample_std_truncated(-b, -a, rng);
    }
    if a <= 0.0 {
        // interval straddles zero
        if b - a < (2.0 * std::f64::consts::PI).sqrt() {
            loop {
                let z = rng.random_range(a..b);
                if rng.random::<f64>() <= (-0.5 * z * z).exp() {
                    return z;
                }
            }
        }
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > a && z < b {
                return z;
            }
        }
    }
    // 0 < a < b
    let root = (a * a + 4.0).sqrt();
    let lambda = 0.5 * (a + root);
    let uniform_width = (2.0 / (a + root)) * ((a * a - a * root) / 4.0 + 0.5).exp();
    if b - a < uniform_width {
        loop {
            let z = rng.random_range(a..b);
            if rng.random::<f64>() <= (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    if a < 0.3 {
        // near the mode plain rejection is cheapest
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > a && z < b {
                return z;
            }
        }
    }
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / lambda;
        if z >= b {
            continue;
        }
        if rng.random::<f64>() <= (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return z;
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolated quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    // closed-form truncated normal mean/variance, independent of the sampler
    fn tn_moments(mu: f64, s: f64, lo: f64, hi: f64) -> (f64, f64) {
        let a = (lo - mu) / s;
        let b = (hi - mu) / s;
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let big = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / 2f64.sqrt()));
        let z = big(b) - big(a);
        let m = mu + s * (phi(a) - phi(b)) / z;
        let v = s * s * (1.0 + (a * phi(a) - b * phi(b)) / z - ((phi(a) - phi(b)) / z).powi(2));
        (m, v)
    }

    fn check_moments(mu: f64, s: f64, lo: f64, hi: f64) {
        let tn = TruncatedNormal::new(mu, s, lo, hi).unwrap();
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| tn.sample(&mut rng)).collect();
        assert!(xs.iter().all(|&x| x >= lo && x <= hi));
        let (m, v) = tn_moments(mu, s, lo, hi);
        let se = (v / n as f64).sqrt();
        assert!(
            (mean(&xs) - m).abs() < 3.0 * se,
            "mean {} vs {} (se {se}) for {:?}",
            mean(&xs),
            m,
            (mu, s, lo, hi)
        );
    }

    #[test]
    fn truncated_normal_moments_match_closed_form() {
        check_moments(0.0, 1.0, -1.0, 2.0); // uniform rejection
        check_moments(0.0, 1.0, -5.0, 5.0); // normal rejection
        check_moments(0.0, 1.0, 0.1, 4.0); // near-mode
        check_moments(0.0, 1.0, 2.5, 9.0); // exponential tail
        check_moments(0.0, 1.0, 3.0, 3.2); // narrow tail
        check_moments(0.0, 0.7799, -16.4337, 0.4163);
        check_moments(0.99, 0.05 * 0.99 / 1.96, 0.5, 1.0);
    }

    #[test]
    fn ln_pdf_integrates_to_one() {
        let tn = TruncatedNormal::new(0.3, 0.5, -0.2, 2.5).unwrap();
        let n = 20_000;
        let h = (tn.high - tn.low) / n as f64;
        let total: f64 = (0..n)
            .map(|i| tn.ln_pdf(tn.low + (i as f64 + 0.5) * h).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert_eq!(tn.ln_pdf(-0.3), f64::NEG_INFINITY);
    }

    #[test]
    fn quantile_inverts_the_cdf() {
        for &(mu, sd, lo, hi) in &[
            (0.3, 0.5, -0.2, 2.5),
            (0.0, 1.0, -8.0, -6.0),
            (0.3, 0.05, 0.5, 1.5),
            (0.0, 1.0, 40.0, 41.0),
        ] {
            let tn = TruncatedNormal::new(mu, sd, lo, hi).unwrap();
            let mut prev = lo;
            for i in 1..100 {
                let u = i as f64 / 100.0;
                let x = tn.quantile(u);
                assert!(x >= prev && x <= hi, "{mu} {sd} {lo} {hi} {u} {x}");
                prev = x;
            }
        }
        // against numerical integration of the density
        let tn = TruncatedNormal::new(0.3, 0.5, -0.2, 2.5).unwrap();
        let x = tn.quantile(0.37);
        let n = 20_000;
        let h = (x - tn.low) / n as f64;
        let mass: f64 = (0..n)
            .map(|i| tn.ln_pdf(tn.low + (i as f64 + 0.5) * h).exp() * h)
            .sum();
        assert!((mass - 0.37).abs() < 1e-6, "{mass}");
        let upper = TruncatedNormal::new(0.3, 0.05, 0.5, 1.5).unwrap();
        let x = upper.quantile(0.5);
        let n = 20_000;
        let h = (x - upper.low) / n as f64;
        let mass: f64 = (0..n)
            .map(|i| upper.ln_pdf(upper.low + (i as f64 + 0.5) * h).exp() * h)
            .sum();
        assert!((mass - 0.5).abs() < 1e-5, "{mass}");
    }

    #[test]
    fn ln_mass_is_accurate_in_tails() {
        let direct = (norm_cdf(-8.0) - norm_cdf(-9.0)).ln();
        assert!((ln_norm_mass(-9.0, -8.0) - direct).abs() < 1e-8);
        assert!(ln_norm_mass(30.0, 31.0).is_finite());
    }

    #[test]
    fn logistic_helpers() {
        assert!((logistic(1.0) - 0.731_058_578_6).abs() < 1e-9);
        assert!((ln_logistic(-800.0) + 800.0).abs() < 1e-9);
        assert!(ln_logistic(800.0).abs() < 1e-12);
        assert!((ln_norm_cdf(-10.0) - (-53.231_285)).abs() < 1e-3);
        assert!((norm_quantile(0.975) - 1.959_964).abs() < 1e-5);
    }
}
