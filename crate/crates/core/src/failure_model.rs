//! Failure CDF models, their error bands, and failure sampling.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cdf::{monotonize, CdfCurve, GridSpec};
use crate::error::{Error, Result};
use crate::mcmc::{marginal_b0, ChainSamples};
use crate::stats::{mean, norm_cdf, quantile_sorted, variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Empirical,
    GaussianFit,
}

/// Error source a band accounts for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    BayesianInferenceComputation,
    FiniteTesting,
    SmeEstimate,
}

/// How a band is formed from a family of curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    /// Pointwise mean ± 1.96 sd.
    #[default]
    NormalApprox,
    /// Pointwise 2.5 % and 97.5 % quantiles.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureModel {
    pub curve: CdfCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<Band>,
    #[serde(default)]
    pub provenance: Vec<Provenance>,
    pub fit_method: FitMethod,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl FailureModel {
    pub fn new(curve: CdfCurve, fit_method: FitMethod) -> Self {
        Self {
            curve,
            band: None,
            provenance: Vec::new(),
            fit_method,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_band(mut self, band: Band, provenance: Provenance) -> Result<Self> {
        self.band = Some(band);
        self.provenance = vec![provenance];
        self.validate()?;
        Ok(self)
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        if let Ok(v) = serde_json::to_value(value) {
            self.metadata.insert(key.to_string(), v);
        }
        self
    }

    /// Curve, band ordering and provenance invariants.
    pub fn validate(&self) -> Result<()> {
        let m = self.curve.values();
        if m.iter().any(|v| !(0.0..=1.0).contains(v)) || m.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("mean curve is not a CDF".into()));
        }
        if let Some(b) = &self.band {
            if b.low.len() != m.len() || b.high.len() != m.len() {
                return Err(Error::InvalidArgument(
                    "band length differs from the grid".into(),
                ));
            }
            for (i, (&y, (&lo, &hi))) in m.iter().zip(b.low.iter().zip(&b.high)).enumerate() {
                if !(0.0 <= lo && lo <= y && y <= hi && hi <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "band ordering violated at grid point {i}"
                    )));
                }
            }
            if b.low.windows(2).any(|w| w[1] < w[0]) || b.high.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidArgument(
                    "band bounds are not monotone".into(),
                ));
            }
            if self.provenance.is_empty() {
                return Err(Error::InvalidArgument("band without provenance".into()));
            }
        }
        Ok(())
    }

    pub fn eval(&self, voltage: f64) -> f64 {
        self.curve.eval(voltage)
    }

    /// `voltage_kv,mean,low,high`; band columns are empty without a band.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "voltage_kv,mean,low,high")?;
        for (i, (v, m)) in self
            .curve
            .grid()
            .iter()
            .zip(self.curve.values())
            .enumerate()
        {
            match &self.band {
                Some(b) => writeln!(w, "{v:?},{m:?},{:?},{:?}", b.low[i], b.high[i])?,
                None => writeln!(w, "{v:?},{m:?},,")?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FittedCdf {
    pub curve: CdfCurve,
    /// Moment-matched (mean, sd) of a Gaussian fit.
    pub gaussian: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

pub fn fit_cdf(samples: &[f64], method: FitMethod, grid: &GridSpec) -> Result<FittedCdf> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(
            "a CDF fit needs at least two samples".into(),
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let g = grid.resolve(samples)?;
    let m = mean(samples);
    let sd = variance(samples).sqrt();
    let mut warnings = Vec::new();
    let degenerate = samples.iter().all(|&v| v == samples[0]);
    if degenerate {
        warnings.push(format!(
            "all samples equal {}; step CDF returned",
            samples[0]
        ));
    }
    let curve = match method {
        _ if degenerate => CdfCurve::empirical(samples, g)?,
        FitMethod::Empirical => CdfCurve::empirical(samples, g)?,
        FitMethod::GaussianFit => {
            let values = g.iter().map(|&v| norm_cdf((v - m) / sd)).collect();
            CdfCurve::from_raw(g, values)?
        }
    };
    let gaussian = (method == FitMethod::GaussianFit && !degenerate).then_some((m, sd));
    Ok(FittedCdf {
        curve,
        gaussian,
        warnings,
    })
}

pub fn eval_cdf(model: &FailureModel, voltage: f64) -> f64 {
    model.eval(voltage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureOutcome {
    Fail,
    Survive,
}

impl FailureOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureOutcome::Fail => "fail",
            FailureOutcome::Survive => "survive",
        }
    }
}

/// One uniform draw per call.
pub fn sample_failure<R: rand::Rng + ?Sized>(
    model: &FailureModel,
    voltage: f64,
    rng: &mut R,
) -> FailureOutcome {
    let u: f64 = rng.random();
    if u < model.eval(voltage) {
        FailureOutcome::Fail
    } else {
        FailureOutcome::Survive
    }
}

/// Same stream consumption as calling [`sample_failure`] in order.
pub fn sample_failures<R: rand::Rng + ?Sized>(
    model: &FailureModel,
    voltages: &[f64],
    rng: &mut R,
) -> Vec<FailureOutcome> {
    voltages
        .iter()
        .map(|&v| sample_failure(model, v, rng))
        .collect()
}

fn check_dkw_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 2], got {alpha}"
        )))
    }
}

/// Smallest n with sup-norm error ≤ ε at confidence 1 − α.
pub fn dkw_sample_size(epsilon: f64, alpha: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    check_dkw_alpha(alpha)?;
    let n = (2.0 / alpha).ln() / (2.0 * epsilon * epsilon);
    // guard against 18445.0000000001-style rounding
    Ok((n - 1e-9).ceil().max(0.0) as u64)
}

pub fn dkw_epsilon(n: u64, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("DKW needs n >= 1".into()));
    }
    check_dkw_alpha(alpha)?;
    Ok(((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt())
}

/// `curve ± ε(n, α)` clipped to [0, 1].
pub fn dkw_band(curve: &CdfCurve, n: u64, alpha: f64) -> Result<FailureModel> {
    let eps = dkw_epsilon(n, alpha)?;
    let band = Band {
        low: curve.values().iter().map(|v| (v - eps).max(0.0)).collect(),
        high: curve.values().iter().map(|v| (v + eps).min(1.0)).collect(),
    };
    Ok(FailureModel::new(curve.clone(), FitMethod::Empirical)
        .with_band(band, Provenance::BayesianInferenceComputation)?
        .with_meta("band_construction", "dkw")
        .with_meta("dkw_epsilon", eps)
        .with_meta("dkw_alpha", alpha)
        .with_meta("dkw_n", n))
}

/// Pointwise summary of curves sharing one grid: mean curve and band.
pub fn band_across(curves: &[CdfCurve], kind: BandKind) -> Result<(CdfCurve, Band)> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves to summarize".into()))?;
    if curves.iter().any(|c| c.grid() != first.grid()) {
        return Err(Error::InvalidArgument("curves must share a grid".into()));
    }
    let n = first.len();
    let mut m = Vec::with_capacity(n);
    let mut low = Vec::with_capacity(n);
    let mut high = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = curves.iter().map(|c| c.values()[i]).collect();
        let mu = mean(&col);
        let (lo, hi) = match kind {
            BandKind::NormalApprox => {
                let sd = if col.len() > 1 {
                    variance(&col).max(0.0).sqrt()
                } else {
                    0.0
                };
                (mu - 1.96 * sd, mu + 1.96 * sd)
            }
            BandKind::Quantile => {
                let mut s = col.clone();
                s.sort_by(f64::total_cmp);
                (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975))
            }
        };
        m.push(mu);
        low.push(lo.min(mu));
        high.push(hi.max(mu));
    }
    let mean_curve = CdfCurve::from_raw(first.grid().to_vec(), m)?;
    let mv = mean_curve.values();
    let low: Vec<f64> = monotonize(low)
        .into_iter()
        .zip(mv)
        .map(|(l, &m)| l.min(m))
        .collect();
    let high: Vec<f64> = monotonize(high)
        .into_iter()
        .zip(mv)
        .map(|(h, &m)| h.max(m))
        .collect();
    Ok((mean_curve, Band { low, high }))
}

pub(crate) fn band_label(kind: BandKind) -> &'static str {
    match kind {
        BandKind::NormalApprox => "mean +/- 1.96 sd",
        BandKind::Quantile => "2.5%/97.5% quantiles",
    }
}

/// Spread of the posterior CDF across chains started from different states.
pub fn finite_test_error(
    chains: &[ChainSamples],
    method: FitMethod,
    grid: &GridSpec,
    kind: BandKind,
) -> Result<FailureModel> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument(
            "finite-test error needs at least two chains".into(),
        ));
    }
    let pooled: Vec<Vec<f64>> = chains.iter().map(marginal_b0).collect();
    let all: Vec<f64> = pooled.iter().flatten().copied().collect();
    let g = GridSpec::Explicit(grid.resolve(&all)?);
    let curves = pooled
        .iter()
        .map(|b| fit_cdf(b, method, &g).map(|f| f.curve))
        .collect::<Result<Vec<_>>>()?;
    let (curve, band) = band_across(&curves, kind)?;
    Ok(FailureModel::new(curve, method)
        .with_band(band, Provenance::FiniteTesting)?
        .with_meta("band_construction", band_label(kind))
        .with_meta(
            "chain_seeds",
            chains.iter().map(|c| c.seed).collect::<Vec<_>>(),
        ))
}

pub use crate::pipeline::{propagate_sme_ci, sequential_update};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdf::linspace;
    use crate::seed::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn dkw_arithmetic() {
        assert_eq!(dkw_sample_size(0.01, 0.05).unwrap(), 18_445);
        assert_eq!(dkw_sample_size(0.1, 0.05).unwrap(), 185);
        assert_eq!(dkw_sample_size(0.1, 2.0).unwrap(), 0);
        assert!(dkw_sample_size(0.0, 0.05).is_err());
        assert!(dkw_sample_size(0.1, 2.5).is_err());
        assert!(dkw_epsilon(18_445, 0.05).unwrap() <= 0.01);
        assert!(dkw_epsilon(18_444, 0.05).unwrap() > 0.01);
        assert!((dkw_epsilon(12, 0.1).unwrap() - 0.3533).abs() < 1e-4);
    }

    #[test]
    fn dkw_band_clips() {
        let c = CdfCurve::new(vec![1.0, 2.0, 3.0], vec![0.005, 0.5, 0.995]).unwrap();
        let m = dkw_band(&c, 18_445, 0.05).unwrap();
        let b = m.band.as_ref().unwrap();
        assert_eq!(b.low[0], 0.0);
        assert_eq!(b.high[2], 1.0);
        assert_eq!(m.provenance, vec![Provenance::BayesianInferenceComputation]);
        let wide = dkw_band(&c, 10, 0.05).unwrap();
        let narrow = dkw_band(&c, 10_000_000, 0.05).unwrap();
        let width = |m: &FailureModel| m.band.as_ref().map(|b| b.high[1] - b.low[1]).unwrap();
        assert!(width(&narrow) < 1e-3 && width(&wide) > width(&narrow));
    }

    #[test]
    fn fits() {
        let f = fit_cdf(
            &[40.0, 60.0],
            FitMethod::Empirical,
            &GridSpec::Explicit(vec![30.0, 50.0, 70.0]),
        )
        .unwrap();
        assert_eq!(f.curve.values(), &[0.0, 0.5, 1.0]);
        let mut rng = rng_from_seed(3);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let g = fit_cdf(
            &xs,
            FitMethod::GaussianFit,
            &GridSpec::Explicit(linspace(-4.0, 4.0, 161)),
        )
        .unwrap();
        let (mu, sd) = g.gaussian.unwrap();
        assert!(mu.abs() < 0.02 && (sd - 1.0).abs() < 0.02);
        assert!((g.curve.eval(0.0) - 0.5).abs() < 0.01);
        assert!((g.curve.eval(1.0) - 0.8413).abs() < 0.01);
        let d = fit_cdf(
            &[5.0, 5.0, 5.0],
            FitMethod::GaussianFit,
            &GridSpec::Explicit(vec![4.0, 5.0, 6.0]),
        )
        .unwrap();
        assert_eq!(d.curve.values(), &[0.0, 1.0, 1.0]);
        assert_eq!(d.warnings.len(), 1);
        assert!(fit_cdf(&[1.0], FitMethod::Empirical, &GridSpec::default()).is_err());
    }

    #[test]
    fn sampling() {
        let c = CdfCurve::new(vec![10.0, 20.0, 30.0], vec![0.0, 0.3, 1.0]).unwrap();
        let m = FailureModel::new(c, FitMethod::Empirical);
        let mut rng = rng_from_seed(4);
        assert!((0..1000).all(|_| sample_failure(&m, 5.0, &mut rng) == FailureOutcome::Survive));
        assert!((0..1000).all(|_| sample_failure(&m, 35.0, &mut rng) == FailureOutcome::Fail));
        let vs = vec![20.0; 100_000];
        let out = sample_failures(&m, &vs, &mut rng_from_seed(5));
        let freq = out.iter().filter(|o| **o == FailureOutcome::Fail).count() as f64 / 1e5;
        assert!((freq - 0.3).abs() < 3.0 * (0.21f64 / 1e5).sqrt());
        let mut r = rng_from_seed(5);
        let scalar: Vec<_> = vs.iter().map(|&v| sample_failure(&m, v, &mut r)).collect();
        assert_eq!(out, scalar);
    }

    #[test]
    fn identical_curves_give_zero_width() {
        let c = CdfCurve::new(vec![1.0, 2.0], vec![0.2, 0.9]).unwrap();
        let (m, b) = band_across(&[c.clone(), c.clone()], BandKind::NormalApprox).unwrap();
        assert_eq!(m.values(), c.values());
        assert_eq!(b.low, c.values());
        assert_eq!(b.high, c.values());
    }

    #[test]
    fn csv_layout() {
        let c = CdfCurve::new(vec![1.0, 2.0], vec![0.2, 0.9]).unwrap();
        let m = dkw_band(&c, 100, 0.05).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("voltage_kv,mean,low,high\n1.0,0.2,"));
        let back: FailureModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
