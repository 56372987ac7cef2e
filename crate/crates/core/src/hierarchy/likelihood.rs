use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::params::{threshold_voltage, DeviceParams};
use crate::error::{Error, Result};
use crate::stats::{ln_logistic, ln_norm_cdf};
use crate::testdata::{DamagedShot, Outcome, TestCampaign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    #[default]
    Logistic,
    Probit,
}

/// Maps the distance above the separating line to a failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    #[serde(default)]
    pub kind: LinkKind,
    /// kV
    pub smoothing: f64,
}

impl Default for Link {
    fn default() -> Self {
        Self {
            kind: LinkKind::Logistic,
            smoothing: 2.0,
        }
    }
}

impl Link {
    pub fn logistic(smoothing: f64) -> Self {
        Self {
            kind: LinkKind::Logistic,
            smoothing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.smoothing > 0.0 && self.smoothing.is_finite() {
            Ok(())
        } else {
            Err(Error::Config("link smoothing must be positive".into()))
        }
    }

    /// ln P(fail) and ln P(pass) for a shot `excess` kV above the line.
    #[inline]
    fn ln_probs(&self, excess: f64) -> (f64, f64) {
        let x = excess / self.smoothing;
        match self.kind {
            LinkKind::Logistic => (ln_logistic(x), ln_logistic(-x)),
            LinkKind::Probit => (ln_norm_cdf(x), ln_norm_cdf(-x)),
        }
    }

    #[inline]
    pub fn shot(&self, dev: &DeviceParams, voltage: f64, damage: f64, outcome: Outcome) -> f64 {
        let (lf, lp) = self.ln_probs(voltage - threshold_voltage(dev, damage));
        match outcome {
            Outcome::Fail => lf,
            Outcome::Pass => lp,
        }
    }

    pub fn device(&self, dev: &DeviceParams, shots: &[DamagedShot]) -> f64 {
        shots
            .iter()
            .map(|s| self.shot(dev, s.shot.voltage, s.damage_before, s.shot.outcome))
            .sum()
    }
}

/// Logistic-link log-likelihood of one shot.
pub fn shot_log_likelihood(dev: &DeviceParams, shot: &DamagedShot, smoothing: f64) -> f64 {
    Link::logistic(smoothing).device(dev, std::slice::from_ref(shot))
}

/// Sum of shot terms over the campaign.
pub fn campaign_log_likelihood(
    params: &HashMap<String, DeviceParams>,
    campaign: &TestCampaign,
    link: &Link,
) -> Result<f64> {
    let mut total = 0.0;
    for id in campaign.device_ids() {
        let dev = params
            .get(id)
            .ok_or_else(|| Error::UnknownDevice(id.to_string()))?;
        total += link.device(dev, &campaign.damage_factor_series(id)?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testdata::ShotRecord;

    fn shot(voltage: f64, damage: f64, outcome: Outcome) -> DamagedShot {
        DamagedShot {
            shot: ShotRecord {
                device_id: "d".into(),
                shot_index: 1,
                voltage,
                outcome,
            },
            damage_before: damage,
        }
    }

    #[test]
    fn at_the_line() {
        let dev = DeviceParams { a0: 10.0, b0: 60.0 };
        for o in [Outcome::Pass, Outcome::Fail] {
            let l = shot_log_likelihood(&dev, &shot(55.0, 0.5, o), 3.0);
            assert!((l - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_value() {
        let dev = DeviceParams { a0: 0.0, b0: 50.0 };
        let l = shot_log_likelihood(&dev, &shot(55.0, 0.0, Outcome::Fail), 5.0);
        let p = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((l - p.ln()).abs() < 1e-12);
        assert!((l + 0.3133).abs() < 1e-4);
    }

    #[test]
    fn saturates_far_below_line() {
        let dev = DeviceParams { a0: 0.0, b0: 50.0 };
        let l = shot_log_likelihood(&dev, &shot(20.0, 0.0, Outcome::Pass), 1e-3);
        assert!(l > -1e-12 && l <= 0.0);
        let l = shot_log_likelihood(&dev, &shot(20.0, 0.0, Outcome::Fail), 1e-3);
        assert!(l < -1e3 && l.is_finite());
    }

    #[test]
    fn probit_is_symmetric() {
        let link = Link {
            kind: LinkKind::Probit,
            smoothing: 2.0,
        };
        let dev = DeviceParams { a0: 0.0, b0: 50.0 };
        let f = link.shot(&dev, 52.0, 0.0, Outcome::Fail);
        let p = link.shot(&dev, 48.0, 0.0, Outcome::Pass);
        assert!((f - p).abs() < 1e-12);
        assert!((f - 0.841_344_746_068_543f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn campaign_sums_and_relabels() {
        let csv = "device_id,shot_index,voltage_kv,outcome\n\
                   a,1,30,pass\na,2,50,fail\nb,1,40,pass\nb,2,60,fail\n";
        let c = crate::testdata::parse_shot_csv(csv.as_bytes()).unwrap();
        let link = Link::default();
        let mut params = HashMap::new();
        params.insert("a".to_string(), DeviceParams { a0: 5.0, b0: 45.0 });
        params.insert("b".to_string(), DeviceParams { a0: 3.0, b0: 55.0 });
        let total = campaign_log_likelihood(&params, &c, &link).unwrap();
        let by_hand: f64 = ["a", "b"]
            .iter()
            .map(|id| link.device(&params[*id], &c.damage_factor_series(id).unwrap()))
            .sum();
        assert!((total - by_hand).abs() < 1e-12);

        let swapped = "device_id,shot_index,voltage_kv,outcome\n\
                       b,1,30,pass\nb,2,50,fail\na,1,40,pass\na,2,60,fail\n";
        let c2 = crate::testdata::parse_shot_csv(swapped.as_bytes()).unwrap();
        let mut p2 = HashMap::new();
        p2.insert("b".to_string(), params["a"]);
        p2.insert("a".to_string(), params["b"]);
        let t2 = campaign_log_likelihood(&p2, &c2, &link).unwrap();
        assert!((total - t2).abs() < 1e-12);

        params.remove("b");
        assert!(matches!(
            campaign_log_likelihood(&params, &c, &link),
            Err(Error::UnknownDevice(_))
        ));
        let empty = TestCampaign::empty(60.0);
        assert_eq!(
            campaign_log_likelihood(&HashMap::new(), &empty, &link).unwrap(),
            0.0
        );
    }
}
