//! Expert CDF anchors and their confidence-interval realizations.
//!
//! Each anchor is a `(voltage, probability)` point on the failure CDF with a
//! 95% CI expressed as a fraction of the probability. Anchors below 0.5 are
//! truncated to `(0, 0.5)`, anchors at or above 0.5 to `(0.5, 1)`, which keeps
//! the lower and upper estimates from crossing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::TruncatedNormal;

pub const DEFAULT_CI_FRACTION: f64 = 0.05;
const Z_95: f64 = 1.96;
const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmeAnchor {
    pub voltage_kv: f64,
    pub prob: f64,
    pub ci_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorPosition {
    UpperAnchor,
    LowerAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    #[default]
    TruncatedGaussian,
    UniformCi,
}

impl SmeAnchor {
    pub fn new(voltage_kv: f64, prob: f64, ci_fraction: f64) -> Result<Self> {
        if !(voltage_kv > 0.0) {
            return Err(Error::Anchors(format!(
                "voltage must be positive, got {voltage_kv}"
            )));
        }
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Anchors(format!(
                "probability must lie in (0, 1), got {prob}"
            )));
        }
        if !(ci_fraction >= 0.0) {
            return Err(Error::Anchors(format!(
                "ci_fraction must be >= 0, got {ci_fraction}"
            )));
        }
        Ok(Self {
            voltage_kv,
            prob,
            ci_fraction,
        })
    }

    pub fn position(&self) -> AnchorPosition {
        if self.prob < 0.5 {
            AnchorPosition::LowerAnchor
        } else {
            AnchorPosition::UpperAnchor
        }
    }
}

/// Standard deviation such that ±1.96σ spans the anchor's CI.
pub fn anchor_sigma(anchor: &SmeAnchor) -> f64 {
    anchor.ci_fraction * anchor.prob / Z_95
}

pub fn truncation_interval(anchor: &SmeAnchor, position: AnchorPosition) -> Result<(f64, f64)> {
    let interval = match position {
        AnchorPosition::UpperAnchor => (0.5, 1.0),
        AnchorPosition::LowerAnchor => (0.0, 0.5),
    };
    if anchor.prob < interval.0 || anchor.prob > interval.1 {
        return Err(Error::Anchors(format!(
            "anchor mean {} outside its truncation interval ({}, {})",
            anchor.prob, interval.0, interval.1
        )));
    }
    Ok(interval)
}

/// CI extent `[p(1-c), p(1+c)]` intersected with the truncation interval.
fn ci_extent(anchor: &SmeAnchor) -> Result<(f64, f64)> {
    let (lo, hi) = truncation_interval(anchor, anchor.position())?;
    let half = anchor.ci_fraction * anchor.prob;
    Ok(((anchor.prob - half).max(lo), (anchor.prob + half).min(hi)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmeAnchorSet {
    anchors: Vec<SmeAnchor>,
}

impl SmeAnchorSet {
    pub fn new(mut anchors: Vec<SmeAnchor>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Anchors("at least one anchor is required".into()));
        }
        anchors.sort_by(|a, b| a.voltage_kv.total_cmp(&b.voltage_kv));
        for w in anchors.windows(2) {
            if !(w[1].voltage_kv > w[0].voltage_kv) {
                return Err(Error::Anchors(
                    "anchor voltages must be strictly increasing".into(),
                ));
            }
            if !(w[1].prob > w[0].prob) {
                return Err(Error::Anchors(
                    "anchor probabilities must increase with voltage".into(),
                ));
            }
        }
        for a in &anchors {
            truncation_interval(a, a.position())?;
        }
        for w in anchors.windows(2) {
            let (_, hi0) = ci_extent(&w[0])?;
            let (lo1, _) = ci_extent(&w[1])?;
            if hi0 >= lo1 {
                return Err(Error::Anchors(format!(
                    "confidence intervals of anchors at {} kV and {} kV overlap",
                    w[0].voltage_kv, w[1].voltage_kv
                )));
            }
        }
        Ok(Self { anchors })
    }

    pub fn anchors(&self) -> &[SmeAnchor] {
        &self.anchors
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.anchors.iter().map(|a| a.voltage_kv).collect()
    }

    /// The anchor means as a realization.
    pub fn means(&self) -> AnchorRealization {
        AnchorRealization {
            voltages: self.voltages(),
            probs: self.anchors.iter().map(|a| a.prob).collect(),
        }
    }

    pub fn with_ci_fraction(&self, ci_fraction: f64) -> Result<Self> {
        Self::new(
            self.anchors
                .iter()
                .map(|a| SmeAnchor { ci_fraction, ..*a })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRealization {
    pub voltages: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn sample_realization<R: rand::Rng + ?Sized>(
    set: &SmeAnchorSet,
    scheme: SamplingScheme,
    rng: &mut R,
) -> Result<AnchorRealization> {
    for _ in 0..MAX_REJECTIONS {
        let mut probs = Vec::with_capacity(set.anchors.len());
        for a in &set.anchors {
            let p = match scheme {
                _ if a.ci_fraction == 0.0 => a.prob,
                SamplingScheme::TruncatedGaussian => {
                    let (lo, hi) = truncation_interval(a, a.position())?;
                    TruncatedNormal::new(a.prob, anchor_sigma(a), lo, hi)?.sample(rng)
                }
                SamplingScheme::UniformCi => {
                    let (lo, hi) = ci_extent(a)?;
                    if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    }
                }
            };
            probs.push(p);
        }
        if probs.windows(2).all(|w| w[1] > w[0]) {
            return Ok(AnchorRealization {
                voltages: set.voltages(),
                probs,
            });
        }
    }
    Err(Error::Anchors(format!(
        "no monotone realization after {MAX_REJECTIONS} attempts; anchor CIs overlap too much"
    )))
}

/// On-disk SME configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmeConfig {
    pub anchors: Vec<AnchorEntry>,
    #[serde(default = "default_ci")]
    pub ci_fraction: f64,
    #[serde(default)]
    pub scheme: SamplingScheme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub voltage_kv: f64,
    pub prob: f64,
    /// Overrides the set-wide `ci_fraction` for this anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_fraction: Option<f64>,
}

fn default_ci() -> f64 {
    DEFAULT_CI_FRACTION
}

impl SmeConfig {
    pub fn anchor_set(&self) -> Result<SmeAnchorSet> {
        SmeAnchorSet::new(
            self.anchors
                .iter()
                .map(|e| {
                    SmeAnchor::new(
                        e.voltage_kv,
                        e.prob,
                        e.ci_fraction.unwrap_or(self.ci_fraction),
                    )
                })
                .collect::<Result<_>>()?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn set(ci: f64) -> SmeAnchorSet {
        SmeAnchorSet::new(vec![
            SmeAnchor::new(30.0, 0.01, ci).unwrap(),
            SmeAnchor::new(60.0, 0.99, ci).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn sigma_arithmetic() {
        let hi = SmeAnchor::new(60.0, 0.99, 0.05).unwrap();
        let lo = SmeAnchor::new(30.0, 0.01, 0.05).unwrap();
        assert!((anchor_sigma(&hi) - 0.025_255_1).abs() < 1e-6);
        assert!((anchor_sigma(&lo) - 0.000_255_1).abs() < 1e-6);
        assert_eq!(anchor_sigma(&SmeAnchor::new(60.0, 0.99, 0.0).unwrap()), 0.0);
    }

    #[test]
    fn truncation_intervals() {
        let hi = SmeAnchor::new(60.0, 0.99, 0.05).unwrap();
        let lo = SmeAnchor::new(30.0, 0.01, 0.05).unwrap();
        assert_eq!(
            truncation_interval(&hi, AnchorPosition::UpperAnchor).unwrap(),
            (0.5, 1.0)
        );
        assert_eq!(
            truncation_interval(&lo, AnchorPosition::LowerAnchor).unwrap(),
            (0.0, 0.5)
        );
        let bad = SmeAnchor::new(30.0, 0.7, 0.05).unwrap();
        assert!(truncation_interval(&bad, AnchorPosition::LowerAnchor).is_err());
    }

    #[test]
    fn zero_ci_realizes_means() {
        let s = set(0.0);
        let mut rng = rng_from_seed(1);
        for scheme in [SamplingScheme::TruncatedGaussian, SamplingScheme::UniformCi] {
            assert_eq!(
                sample_realization(&s, scheme, &mut rng).unwrap().probs,
                vec![0.01, 0.99]
            );
        }
    }

    #[test]
    fn uniform_ci_stays_in_interval() {
        let s = set(0.05);
        let mut rng = rng_from_seed(2);
        for _ in 0..10_000 {
            let r = sample_realization(&s, SamplingScheme::UniformCi, &mut rng).unwrap();
            assert!(r.probs[0] >= 0.0095 - 1e-15 && r.probs[0] <= 0.0105 + 1e-15);
            assert!(r.probs[1] >= 0.9405 - 1e-12 && r.probs[1] <= 0.99 * 1.05);
            assert!(r.probs[1] <= 1.0);
        }
    }

    #[test]
    fn truncated_gaussian_mean_matches_moment_formula() {
        let s = set(0.05);
        let mut rng = rng_from_seed(3);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                sample_realization(&s, SamplingScheme::TruncatedGaussian, &mut rng)
                    .unwrap()
                    .probs[1]
            })
            .collect();
        // oracle: mean and variance of N(0.99, σ²) truncated to (0.5, 1.0)
        let sd = 0.05 * 0.99 / 1.96;
        let (a, b) = ((0.5 - 0.99) / sd, (1.0 - 0.99) / sd);
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / 2f64.sqrt()));
        let z = cdf(b) - cdf(a);
        let m = 0.99 + sd * (phi(a) - phi(b)) / z;
        let v = sd * sd * (1.0 + (a * phi(a) - b * phi(b)) / z - ((phi(a) - phi(b)) / z).powi(2));
        let emp = draws.iter().sum::<f64>() / n as f64;
        assert!(
            (emp - m).abs() < 3.0 * (v / n as f64).sqrt(),
            "{emp} vs {m}"
        );
        assert!(draws.iter().all(|&p| p > 0.5 && p < 1.0));
    }

    #[test]
    fn rejects_non_monotone_and_overlapping_sets() {
        assert!(SmeAnchorSet::new(vec![
            SmeAnchor::new(30.0, 0.4, 0.05).unwrap(),
            SmeAnchor::new(60.0, 0.3, 0.05).unwrap(),
        ])
        .is_err());
        // three lower anchors whose CIs overlap
        assert!(SmeAnchorSet::new(vec![
            SmeAnchor::new(30.0, 0.10, 0.2).unwrap(),
            SmeAnchor::new(40.0, 0.11, 0.2).unwrap(),
        ])
        .is_err());
    }

    #[test]
    fn config_json() {
        let cfg: SmeConfig = serde_json::from_str(
            r#"{"anchors":[{"voltage_kv":30,"prob":0.01},{"voltage_kv":60,"prob":0.99}],"ci_fraction":0.05,"scheme":"truncated_gaussian"}"#,
        )
        .unwrap();
        let s = cfg.anchor_set().unwrap();
        assert_eq!(s.anchors().len(), 2);
        assert_eq!(cfg.scheme, SamplingScheme::TruncatedGaussian);
    }
}
