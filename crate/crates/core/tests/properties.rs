use failmodel::baseline::lse_gaussian_fit;
use failmodel::cdf::{monotonize, CdfCurve};
use failmodel::failure_model::{band_across, dkw_band, dkw_epsilon, BandKind};
use failmodel::hierarchy::{shot_log_likelihood, DeviceParams};
use failmodel::seed::rng_from_seed;
use failmodel::sme::{
    sample_realization, truncation_interval, SamplingScheme, SmeAnchor, SmeAnchorSet,
};
use failmodel::stats::{norm_cdf, TruncatedNormal};
use failmodel::testdata::{DamagedShot, Outcome, ShotRecord, TestCampaign};
use proptest::prelude::*;

fn grid_and_values() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..10.0, n),
            prop::collection::vec(0.0f64..1.0, n),
            -100.0f64..100.0,
        )
            .prop_map(|(steps, raw, start)| {
                let mut g = Vec::with_capacity(steps.len());
                let mut v = start;
                for s in steps {
                    g.push(v);
                    v += s;
                }
                (g, monotonize(raw))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn curve_axioms((grid, values) in grid_and_values(), probe in prop::collection::vec(-200.0f64..200.0, 8)) {
        let c = CdfCurve::new(grid.clone(), values).unwrap();
        let mut probe = probe;
        probe.sort_by(f64::total_cmp);
        let ys: Vec<f64> = probe.iter().map(|&v| c.eval(v)).collect();
        prop_assert!(ys.iter().all(|y| (0.0..=1.0).contains(y)));
        prop_assert!(ys.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(c.eval(grid[0] - 1.0), 0.0);
        prop_assert_eq!(c.eval(grid[grid.len() - 1] + 1.0), 1.0);
        for (g, y) in grid.iter().zip(c.values()) {
            prop_assert!((c.eval(*g) - y).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn dkw_band_brackets_the_curve((grid, values) in grid_and_values(), n in 1u64..100_000, alpha in 0.001f64..0.5) {
        let c = CdfCurve::new(grid, values).unwrap();
        let m = dkw_band(&c, n, alpha).unwrap();
        let b = m.band.as_ref().unwrap();
        let eps = dkw_epsilon(n, alpha).unwrap();
        for ((y, lo), hi) in c.values().iter().zip(&b.low).zip(&b.high) {
            prop_assert!(*lo >= 0.0 && *hi <= 1.0);
            prop_assert!(lo <= y && y <= hi);
            prop_assert!(hi - lo <= 2.0 * eps + 1e-12);
        }
    }

    #[test]
    fn band_across_contains_the_mean(curves in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 12), 2..6), normal in any::<bool>()) {
        let grid: Vec<f64> = (0..12).map(|i| 10.0 * i as f64).collect();
        let cs: Vec<CdfCurve> = curves.into_iter().map(|v| CdfCurve::new(grid.clone(), monotonize(v)).unwrap()).collect();
        let kind = if normal { BandKind::NormalApprox } else { BandKind::Quantile };
        let (mean, band) = band_across(&cs, kind).unwrap();
        prop_assert!(mean.values().windows(2).all(|w| w[0] <= w[1]));
        for i in 0..12 {
            prop_assert!((0.0..=1.0).contains(&band.low[i]) && (0.0..=1.0).contains(&band.high[i]));
            prop_assert!(band.low[i] <= band.high[i]);
        }
    }

    #[test]
    fn baseline_is_affine_equivariant(
        v in prop::collection::vec(-50.0f64..50.0, 3..30),
        shift in -1e3f64..1e3,
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(v.iter().any(|&x| (x - v[0]).abs() > 1e-3));
        let f = lse_gaussian_fit(&v).unwrap();
        let w: Vec<f64> = v.iter().map(|x| scale * x + shift).collect();
        let g = lse_gaussian_fit(&w).unwrap();
        let tol = 1e-6 * scale * (1.0 + f.mu.abs() + f.sigma);
        prop_assert!((g.mu - (scale * f.mu + shift)).abs() <= tol + 1e-9 * shift.abs());
        prop_assert!((g.sigma - scale * f.sigma).abs() <= tol);
    }

    #[test]
    fn damage_is_a_running_sum(volts in prop::collection::vec(1.0f64..100.0, 1..12), norm in 10.0f64..200.0) {
        let n = volts.len();
        let shots: Vec<ShotRecord> = volts
            .iter()
            .enumerate()
            .map(|(i, &v)| ShotRecord {
                device_id: "d".into(),
                shot_index: i as u32 + 1,
                voltage: v,
                outcome: if i + 1 == n { Outcome::Fail } else { Outcome::Pass },
            })
            .collect();
        let c = TestCampaign::from_shots(shots, Some(norm)).unwrap();
        let series = c.damage_factor_series("d").unwrap();
        let mut acc = 0.0;
        for (s, v) in series.iter().zip(&volts) {
            prop_assert!((s.damage_before - acc).abs() <= 1e-12 * (1.0 + acc));
            acc += v * v / (norm * norm);
        }
    }

    #[test]
    fn shot_likelihoods_are_complementary(a0 in -50.0f64..50.0, b0 in 1.0f64..200.0, v in 0.0f64..250.0, d in 0.0f64..5.0, s in 0.1f64..20.0) {
        let dev = DeviceParams { a0, b0 };
        let shot = |outcome| DamagedShot {
            shot: ShotRecord { device_id: "d".into(), shot_index: 1, voltage: v, outcome },
            damage_before: d,
        };
        let pf = shot_log_likelihood(&dev, &shot(Outcome::Fail), s).exp();
        let pp = shot_log_likelihood(&dev, &shot(Outcome::Pass), s).exp();
        prop_assert!((pf + pp - 1.0).abs() < 1e-9);
    }

    #[test]
    fn truncated_quantile_inverts_cdf(mu in -5.0f64..5.0, sd in 0.05f64..5.0, lo in -10.0f64..10.0, w in 0.01f64..10.0, u in 0.001f64..0.999) {
        let hi = lo + w;
        let t = TruncatedNormal::new(mu, sd, lo, hi).unwrap();
        let x = t.quantile(u);
        prop_assert!(lo <= x && x <= hi);
        let z = |x: f64| norm_cdf((x - mu) / sd);
        let mass = z(hi) - z(lo);
        // only well-conditioned cases; the tails are covered by unit tests
        prop_assume!(mass > 1e-6);
        let back = (z(x) - z(lo)) / mass;
        prop_assert!((back - u).abs() < 1e-6, "u {} back {}", u, back);
    }

    #[test]
    fn realizations_stay_in_their_intervals(p1 in 0.001f64..0.45, p2 in 0.55f64..0.999, ci in 0.0f64..0.3, seed in any::<u64>(), uniform in any::<bool>()) {
        let anchors = vec![SmeAnchor::new(30.0, p1, ci).unwrap(), SmeAnchor::new(60.0, p2, ci).unwrap()];
        // overlapping intervals are rejected up front
        let Ok(set) = SmeAnchorSet::new(anchors) else { return Ok(()) };
        let scheme = if uniform { SamplingScheme::UniformCi } else { SamplingScheme::TruncatedGaussian };
        let r = sample_realization(&set, scheme, &mut rng_from_seed(seed)).unwrap();
        prop_assert!(r.probs[0] < r.probs[1]);
        for (a, p) in set.anchors().iter().zip(&r.probs) {
            let (lo, hi) = truncation_interval(a, a.position()).unwrap();
            prop_assert!(lo <= *p && *p <= hi);
        }
    }
}
