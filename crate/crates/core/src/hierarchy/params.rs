use serde::{Deserialize, Serialize};

use super::bounds::{row_symbol, HyperBounds, Sym, SymValues};
use crate::error::{Error, Result};
use crate::stats::TruncatedNormal;

const MAX_REDRAWS: usize = 1_000;

/// Hyperparameters γ = (α₁..α₄, β₁..β₄).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: [f64; 4],
    pub beta: [f64; 4],
}

impl HyperParams {
    pub fn zeros() -> Self {
        Self {
            alpha: [0.0; 4],
            beta: [0.0; 4],
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        if i < 4 {
            self.alpha[i]
        } else {
            self.beta[i - 4]
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        if i < 4 {
            self.alpha[i] = v
        } else {
            self.beta[i - 4] = v
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..8).map(|i| self.get(i)).collect()
    }

    /// The uniform supports of the mid level are non-degenerate.
    pub fn is_feasible(&self) -> bool {
        self.alpha[1] <= 0.0 && self.alpha[3] >= 0.0 && self.beta[1] >= 0.0 && self.beta[3] >= 0.0
    }

    /// Every row lies within its bounds once `mu_a`/`mu_b` are known.
    pub fn within_bounds(&self, bounds: &HyperBounds, mu_a: f64, mu_b: f64) -> bool {
        let mut ctx = SymValues::default();
        ctx.set(Sym::MuA, mu_a);
        ctx.set(Sym::MuB, mu_b);
        for i in 0..8 {
            ctx.set(row_symbol(i), self.get(i));
        }
        (0..8).all(|i| match bounds.row(i).resolve(&ctx) {
            Some((lo, hi)) => self.get(i) >= lo && self.get(i) <= hi,
            None => false,
        })
    }
}

/// Location/range parameters of one group (model voltage units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidParams {
    pub mu_a: f64,
    pub r_a: f64,
    pub mu_b: f64,
    pub r_b: f64,
}

impl MidParams {
    pub fn is_feasible(&self) -> bool {
        self.r_a >= 0.0 && self.r_b >= 0.0 && self.mu_b > 0.0
    }
}

/// Per-device separating line `V = b0 - a0·d`, in kV.
///
/// `a0` is the slope magnitude; the line always slopes down with damage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub a0: f64,
    pub b0: f64,
}

pub fn threshold_voltage(dev: &DeviceParams, damage: f64) -> f64 {
    dev.b0 - dev.a0 * damage
}

/// Prior over γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPrior {
    /// γ held fixed; only group and device levels vary.
    Fixed(HyperParams),
    /// γᵢ ~ TND(centerᵢ, spread·scaleᵢ) truncated to the row bounds.
    Truncated { center: HyperParams, spread: f64 },
}

impl GammaPrior {
    /// Zero-mean truncated normals with the table scales.
    pub fn table() -> Self {
        GammaPrior::Truncated {
            center: HyperParams::zeros(),
            spread: 1.0,
        }
    }

    pub fn centered(center: HyperParams, spread: f64) -> Self {
        if spread > 0.0 {
            GammaPrior::Truncated { center, spread }
        } else {
            GammaPrior::Fixed(center)
        }
    }

    pub fn is_sampled(&self) -> bool {
        matches!(self, GammaPrior::Truncated { .. })
    }
}

fn default_unit() -> f64 {
    10.0
}

/// Full prior over the parameter ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyPrior {
    pub bounds: HyperBounds,
    pub gamma: GammaPrior,
    /// kV per model voltage unit; mid-level locations and ranges are
    /// expressed in these units.
    #[serde(default = "default_unit")]
    pub voltage_unit_kv: f64,
}

impl Default for HierarchyPrior {
    fn default() -> Self {
        Self {
            bounds: HyperBounds::default(),
            gamma: GammaPrior::table(),
            voltage_unit_kv: default_unit(),
        }
    }
}

impl HierarchyPrior {
    pub fn with_gamma(&self, gamma: GammaPrior) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.voltage_unit_kv > 0.0) {
            return Err(Error::Config("voltage_unit_kv must be positive".into()));
        }
        if let GammaPrior::Truncated { spread, .. } = self.gamma {
            if !(spread > 0.0) {
                return Err(Error::Config("gamma prior spread must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A γ draw together with the mid-level locations its dependent bounds
/// were resolved against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDraw {
    pub gamma: HyperParams,
    pub mu_a: f64,
    pub mu_b: f64,
}

fn uniform<R: rand::Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One attempt at γ with TND(center, spread·scale) rows; `None` when a
/// resolved interval is empty or γ is infeasible.
pub(crate) fn try_draw_hyper<R: rand::Rng + ?Sized>(
    bounds: &HyperBounds,
    center: &HyperParams,
    spread: f64,
    rng: &mut R,
) -> Option<HyperDraw> {
    let mut ctx = SymValues::default();
    let mut gamma = HyperParams::zeros();
    let mut mu_a = 0.0;
    let mut mu_b = 0.0;
    for i in 0..8 {
        let row = bounds.row(i);
        let (lo, hi) = row.resolve(&ctx)?;
        if !(lo < hi) {
            return None;
        }
        let x = TruncatedNormal::new(center.get(i), row.scale * spread, lo, hi)
            .ok()?
            .sample(rng);
        gamma.set(i, x);
        ctx.set(row_symbol(i), x);
        // preview of the location parameter once its two rows are known
        if i == 1 {
            if gamma.alpha[1] > 0.0 {
                return None;
            }
            mu_a = uniform(gamma.alpha[0] + gamma.alpha[1], gamma.alpha[0], rng);
            ctx.set(Sym::MuA, mu_a);
        } else if i == 5 {
            if gamma.beta[1] < 0.0 {
                return None;
            }
            mu_b = uniform(gamma.beta[0], gamma.beta[0] + gamma.beta[1], rng);
            ctx.set(Sym::MuB, mu_b);
        }
    }
    gamma
        .is_feasible()
        .then_some(HyperDraw { gamma, mu_a, mu_b })
}

/// Draws γ from zero-mean truncated normals with the row scales, resolving
/// dependent bounds against a preview of μ_a / μ_b.
pub fn sample_hyperparams<R: rand::Rng + ?Sized>(
    bounds: &HyperBounds,
    rng: &mut R,
) -> Result<HyperDraw> {
    bounds.validate()?;
    let zero = HyperParams::zeros();
    for _ in 0..MAX_REDRAWS {
        if let Some(d) = try_draw_hyper(bounds, &zero, 1.0, rng) {
            return Ok(d);
        }
    }
    Err(Error::Infeasible {
        reason: "no hyperparameter draw satisfied its bounds".into(),
        accepted: 0,
        attempts: MAX_REDRAWS,
    })
}

/// Mid-level draw for fixed γ.
pub fn sample_mid<R: rand::Rng + ?Sized>(gamma: &HyperParams, rng: &mut R) -> Result<MidParams> {
    if !gamma.is_feasible() {
        return Err(Error::Infeasible {
            reason: "inverted uniform support for mid-level parameters".into(),
            accepted: 0,
            attempts: 1,
        });
    }
    let [a1, a2, a3, a4] = gamma.alpha;
    let [b1, b2, b3, b4] = gamma.beta;
    let mid = MidParams {
        mu_a: uniform(a1 + a2, a1, rng),
        r_a: uniform(a3, a3 + a4, rng),
        mu_b: uniform(b1, b1 + b2, rng),
        r_b: uniform(b3, b3 + b4, rng),
    };
    if !mid.is_feasible() {
        return Err(Error::Infeasible {
            reason: "mid-level draw has a negative range or non-positive intercept".into(),
            accepted: 0,
            attempts: 1,
        });
    }
    Ok(mid)
}

/// One device draw (no redraw); `None` when the intercept is not positive.
pub(crate) fn try_draw_device<R: rand::Rng + ?Sized>(
    mid: &MidParams,
    unit_kv: f64,
    rng: &mut R,
) -> Option<DeviceParams> {
    let a = uniform(mid.mu_a - 0.5 * mid.r_a, mid.mu_a + 0.5 * mid.r_a, rng);
    let b = uniform(mid.mu_b - 0.5 * mid.r_b, mid.mu_b + 0.5 * mid.r_b, rng);
    (b > 0.0).then_some(DeviceParams {
        a0: a.abs() * unit_kv,
        b0: b * unit_kv,
    })
}

/// Device line for a group, redrawing non-positive intercepts.
pub fn sample_device<R: rand::Rng + ?Sized>(
    mid: &MidParams,
    unit_kv: f64,
    rng: &mut R,
) -> Result<DeviceParams> {
    for _ in 0..MAX_REDRAWS {
        if let Some(d) = try_draw_device(mid, unit_kv, rng) {
            return Ok(d);
        }
    }
    Err(Error::Infeasible {
        reason: "device intercept never positive".into(),
        accepted: 0,
        attempts: MAX_REDRAWS,
    })
}

/// Maps a point of the unit cube to γ by resolving each row's interval in
/// ladder order.
///
/// Feasibility clips are applied first (α₂ ≤ 0, α₄, β₂, β₃, β₄ ≥ 0) and
/// dependent bounds use the midpoint of the μ_a / μ_b support, which keeps
/// at least half of all mid-level draws consistent with γ.
pub fn hyper_from_unit(bounds: &HyperBounds, u: &[f64]) -> Option<HyperParams> {
    assert_eq!(u.len(), 8);
    let mut ctx = SymValues::default();
    let mut gamma = HyperParams::zeros();
    for (i, &ui) in u.iter().enumerate() {
        let (mut lo, mut hi) = bounds.row(i).resolve(&ctx)?;
        match i {
            1 => hi = hi.min(0.0),
            3 | 5 | 6 | 7 => lo = lo.max(0.0),
            _ => {}
        }
        if !(lo < hi) {
            return None;
        }
        let x = lo + (hi - lo) * ui.clamp(0.0, 1.0);
        gamma.set(i, x);
        ctx.set(row_symbol(i), x);
        if i == 1 {
            ctx.set(Sym::MuA, gamma.alpha[0] + 0.5 * gamma.alpha[1]);
        } else if i == 5 {
            ctx.set(Sym::MuB, gamma.beta[0] + 0.5 * gamma.beta[1]);
        }
    }
    gamma.is_feasible().then_some(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn table_gamma() -> HyperParams {
        HyperParams {
            alpha: [-1.0, -0.5, 0.6, 0.4],
            beta: [3.0, 2.0, 1.0, 0.5],
        }
    }

    #[test]
    fn threshold_line() {
        let d = DeviceParams { a0: 10.0, b0: 60.0 };
        assert_eq!(threshold_voltage(&d, 0.0), 60.0);
        assert_eq!(threshold_voltage(&d, 0.5), 55.0);
        let flat = DeviceParams { a0: 0.0, b0: 60.0 };
        assert_eq!(threshold_voltage(&flat, 3.0), 60.0);
    }

    #[test]
    fn hyper_draws_respect_bounds() {
        let b = HyperBounds::default();
        let mut rng = rng_from_seed(5);
        for _ in 0..20_000 {
            let d = sample_hyperparams(&b, &mut rng).unwrap();
            let g = d.gamma;
            assert!(g.alpha[0] > -16.4337 && g.alpha[0] < 0.4163);
            assert!(g.beta[0] > 0.3111 && g.beta[0] < 12.2278);
            assert!(g.is_feasible());
            assert!(g.within_bounds(&b, d.mu_a, d.mu_b));
        }
    }

    fn constant_bounds() -> HyperBounds {
        use super::super::bounds::{Bound, BoundRow};
        let row = |lo: f64, hi: f64, scale: f64| BoundRow {
            low: Bound::Const(lo),
            high: Bound::Const(hi),
            scale,
        };
        HyperBounds {
            alpha1: row(-3.0, 0.5, 0.7799),
            alpha2: row(-2.0, -0.1, 0.5),
            alpha3: row(0.1, 1.0, 0.5),
            alpha4: row(0.1, 1.0, 0.5),
            beta1: row(0.3111, 12.2278, 3.9211),
            beta2: row(0.5, 4.0, 1.0),
            beta3: row(0.1, 1.0, 0.5),
            beta4: row(0.1, 1.0, 0.5),
        }
    }

    #[test]
    fn hyper_marginal_matches_truncated_moments() {
        // all rows constant and feasible, so nothing is rejected and each
        // marginal is the plain truncated normal
        let b = constant_bounds();
        let mut rng = rng_from_seed(9);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_hyperparams(&b, &mut rng).unwrap().gamma.beta[0])
            .collect();
        let s = 3.9211;
        let (a, bb) = (0.3111 / s, 12.2278 / s);
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / 2f64.sqrt()));
        let z = cdf(bb) - cdf(a);
        let m = s * (phi(a) - phi(bb)) / z;
        let v = s * s * (1.0 + (a * phi(a) - bb * phi(bb)) / z - ((phi(a) - phi(bb)) / z).powi(2));
        let emp = xs.iter().sum::<f64>() / n as f64;
        assert!(
            (emp - m).abs() < 3.0 * (v / n as f64).sqrt(),
            "{emp} vs {m}"
        );
    }

    #[test]
    fn narrow_row_concentrates_at_midpoint() {
        use super::super::bounds::Bound;
        let mut b = constant_bounds();
        b.beta1.low = Bound::Const(2.0);
        b.beta1.high = Bound::Const(2.0 + 1e-6);
        b.beta1.scale = 1e-3;
        let mut rng = rng_from_seed(1);
        for _ in 0..100 {
            let g = sample_hyperparams(&b, &mut rng).unwrap().gamma;
            assert!((g.beta[0] - (2.0 + 5e-7)).abs() <= 5e-7 + 1e-12);
        }
    }

    #[test]
    fn mid_draws() {
        let mut rng = rng_from_seed(2);
        let mut g = table_gamma();
        g.alpha[1] = 0.0;
        assert_eq!(sample_mid(&g, &mut rng).unwrap().mu_a, -1.0);
        let g = table_gamma();
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let m = sample_mid(&g, &mut rng).unwrap();
            assert!(m.mu_b > 3.0 && m.mu_b < 5.0);
            sum += m.mu_b;
        }
        // uniform(3, 5): mean 4, sd 2/sqrt(12)
        let se = (4.0f64 / 12.0 / n as f64).sqrt();
        assert!((sum / n as f64 - 4.0).abs() < 3.0 * se);
        let mut bad = table_gamma();
        bad.alpha[1] = 0.3;
        assert!(matches!(
            sample_mid(&bad, &mut rng),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn device_draws() {
        let mut rng = rng_from_seed(3);
        let point = MidParams {
            mu_a: -0.8,
            r_a: 0.0,
            mu_b: 5.0,
            r_b: 0.0,
        };
        let d = sample_device(&point, 1.0, &mut rng).unwrap();
        assert_eq!((d.a0, d.b0), (0.8, 5.0));
        let mid = MidParams {
            mu_a: -0.8,
            r_a: 0.4,
            mu_b: 0.5,
            r_b: 2.0,
        };
        for _ in 0..10_000 {
            let d = sample_device(&mid, 10.0, &mut rng).unwrap();
            assert!(d.a0 >= 6.0 && d.a0 <= 10.0);
            assert!(d.b0 > 0.0 && d.b0 <= 15.0);
        }
    }

    #[test]
    fn unit_map_resolves_dependent_rows() {
        let b = HyperBounds::default();
        let g = hyper_from_unit(&b, &[0.5; 8]).unwrap();
        assert!(g.is_feasible());
        let mu_a = g.alpha[0] + 0.5 * g.alpha[1];
        assert!(g.alpha[2] + g.alpha[3] <= -2.0 * mu_a + 1e-12);
        // alpha1 at its top and alpha2 at zero leaves no room for alpha3
        assert!(hyper_from_unit(&b, &[1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).is_none());
    }
}
