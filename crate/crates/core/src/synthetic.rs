//! Synthetic step-stress campaigns from a known separating line.
//!
//! Each device is shot at increasing voltage, starting at `start_kv` and
//! stepping through `steps_kv` cyclically, until it fails or the next
//! voltage would exceed `max_kv`. A shot fails with probability
//! `logistic((V - (b0 - a0·d)) / smoothing)`, where `d` is the damage
//! accumulated before the shot, normalized by `normalizer_kv`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::logistic;
use crate::testdata::{Outcome, ShotRecord, TestCampaign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_devices: usize,
    pub a0: f64,
    pub b0_kv: f64,
    pub smoothing_kv: f64,
    pub start_kv: f64,
    pub max_kv: f64,
    pub steps_kv: Vec<f64>,
    pub normalizer_kv: f64,
    /// Prefix of the generated device ids.
    pub id_prefix: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_devices: 12,
            a0: 8.0,
            b0_kv: 55.0,
            smoothing_kv: 2.0,
            start_kv: 20.0,
            max_kv: 80.0,
            steps_kv: vec![5.0, 7.5, 10.0],
            normalizer_kv: 80.0,
            id_prefix: "dev".into(),
        }
    }
}

pub fn generate_shots<R: rand::Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Vec<ShotRecord> {
    let mut shots = Vec::new();
    for k in 0..spec.n_devices {
        let id = format!("{}{:02}", spec.id_prefix, k + 1);
        let mut v = spec.start_kv;
        let mut sum_sq = 0.0;
        let mut index = 1u32;
        let mut step = k % spec.steps_kv.len().max(1);
        while v <= spec.max_kv + 1e-9 {
            let d = sum_sq / (spec.normalizer_kv * spec.normalizer_kv);
            let p = logistic((v - (spec.b0_kv - spec.a0 * d)) / spec.smoothing_kv);
            let outcome = if rng.random::<f64>() < p {
                Outcome::Fail
            } else {
                Outcome::Pass
            };
            shots.push(ShotRecord {
                device_id: id.clone(),
                shot_index: index,
                voltage: v,
                outcome,
            });
            if outcome == Outcome::Fail || spec.steps_kv.is_empty() {
                break;
            }
            sum_sq += v * v;
            index += 1;
            v += spec.steps_kv[step];
            step = (step + 1) % spec.steps_kv.len();
        }
    }
    shots
}

/// Generated campaign normalized by the generator's own `normalizer_kv`, so
/// fitted intercepts and slopes are in the generator's units.
pub fn generate_campaign<R: rand::Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<TestCampaign> {
    TestCampaign::from_shots(generate_shots(spec, rng), Some(spec.normalizer_kv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn protocol_shape() {
        let c = generate_campaign(&SyntheticSpec::default(), &mut rng_from_seed(1)).unwrap();
        assert_eq!(c.n_devices(), 12);
        for id in c.device_ids() {
            let s = c.device_shots(id).unwrap();
            assert_eq!(s[0].voltage, 20.0);
            assert!(s.windows(2).all(|w| w[1].voltage > w[0].voltage));
            assert!(s.iter().all(|x| x.voltage <= 80.0));
        }
        let fails = c.failure_voltages();
        assert!(fails.len() >= 10);
        assert!(fails.iter().all(|&v| v > 35.0 && v < 70.0), "{fails:?}");
    }

    #[test]
    fn hard_threshold_without_damage() {
        let spec = SyntheticSpec {
            n_devices: 3,
            a0: 0.0,
            smoothing_kv: 1e-6,
            ..Default::default()
        };
        let c = generate_campaign(&spec, &mut rng_from_seed(2)).unwrap();
        for v in c.failure_voltages() {
            assert!(v > 55.0 && v <= 65.0);
        }
    }
}
