use super::layout::{HierarchyShape, ModelLayout};
use super::params::HierarchyPrior;
use crate::cdf::CdfCurve;
use crate::error::{Error, Result};

/// Attempts allowed per requested draw before giving up.
pub const ATTEMPTS_PER_DRAW: usize = 50;

#[derive(Debug, Clone)]
pub struct PriorPredictive {
    pub curve: CdfCurve,
    /// kV
    pub b0: Vec<f64>,
    pub accepted: usize,
    pub attempts: usize,
}

/// Zero-damage thresholds of `n_draws` forward draws of one device.
pub fn prior_b0_draws<R: rand::Rng + ?Sized>(
    prior: &HierarchyPrior,
    n_draws: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
    }
    let layout = ModelLayout::new(&HierarchyShape::default(), &[], prior.gamma.is_sampled())?;
    let max_attempts = ATTEMPTS_PER_DRAW * n_draws;
    let mut b0 = Vec::with_capacity(n_draws);
    let mut attempts = 0;
    while b0.len() < n_draws && attempts < max_attempts {
        attempts += 1;
        if let Some((_, ladder)) = layout.try_draw(prior, rng) {
            b0.push(ladder.devices[0].b0);
        }
    }
    if b0.len() < n_draws {
        return Err(Error::Infeasible {
            reason: "prior ladder rejects too many draws".into(),
            accepted: b0.len(),
            attempts,
        });
    }
    Ok((b0, attempts))
}

/// Empirical CDF of the forward-sampled zero-damage threshold.
pub fn prior_predictive_cdf<R: rand::Rng + ?Sized>(
    prior: &HierarchyPrior,
    n_draws: usize,
    grid: Vec<f64>,
    rng: &mut R,
) -> Result<PriorPredictive> {
    let (b0, attempts) = prior_b0_draws(prior, n_draws, rng)?;
    Ok(PriorPredictive {
        curve: CdfCurve::empirical(&b0, grid)?,
        accepted: b0.len(),
        attempts,
        b0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdf::linspace;
    use crate::hierarchy::params::{GammaPrior, HyperParams};
    use crate::hierarchy::HyperBounds;
    use crate::seed::rng_from_seed;

    /// Constant bounds wide enough that the fixed γ below is always valid.
    fn open_prior(gamma: HyperParams) -> HierarchyPrior {
        let mut bounds = HyperBounds::default();
        for i in 0..8 {
            let row = bounds.row_mut(i);
            row.low = crate::hierarchy::Bound::Const(-100.0);
            row.high = crate::hierarchy::Bound::Const(100.0);
        }
        HierarchyPrior {
            bounds,
            gamma: GammaPrior::Fixed(gamma),
            voltage_unit_kv: 1.0,
        }
    }

    #[test]
    fn point_mass_ladder_gives_step() {
        let prior = open_prior(HyperParams {
            alpha: [-1.0, 0.0, 0.0, 0.0],
            beta: [50.0, 0.0, 0.0, 0.0],
        });
        let mut rng = rng_from_seed(1);
        let p = prior_predictive_cdf(&prior, 100, vec![40.0, 49.9, 50.0, 60.0], &mut rng).unwrap();
        assert_eq!(p.curve.values(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn uniform_intercept_gives_linear_cdf() {
        // μ_b = 50, r_b = 20 fixed: b0 ~ U(40, 60)
        let prior = open_prior(HyperParams {
            alpha: [-1.0, 0.0, 0.5, 0.0],
            beta: [50.0, 0.0, 20.0, 0.0],
        });
        let mut rng = rng_from_seed(2);
        let grid = linspace(30.0, 70.0, 81);
        let p = prior_predictive_cdf(&prior, 20_000, grid.clone(), &mut rng).unwrap();
        assert!((p.curve.eval(50.0) - 0.5).abs() < 0.01);
        for &v in &grid {
            let exact = ((v - 40.0) / 20.0).clamp(0.0, 1.0);
            assert!((p.curve.eval(v) - exact).abs() < 0.015);
        }
    }

    #[test]
    fn infeasible_gamma_reports_counts() {
        let prior = open_prior(HyperParams {
            alpha: [-1.0, 0.5, 0.5, 0.0],
            beta: [50.0, 0.0, 20.0, 0.0],
        });
        let mut rng = rng_from_seed(3);
        match prior_predictive_cdf(&prior, 10, vec![1.0, 2.0], &mut rng) {
            Err(Error::Infeasible {
                accepted, attempts, ..
            }) => {
                assert_eq!(accepted, 0);
                assert_eq!(attempts, 10 * ATTEMPTS_PER_DRAW);
            }
            other => panic!("{other:?}"),
        }
    }
}
