//! Pulse-test campaign ingestion and accumulated damage factors.
//!
//! A campaign is a set of devices, each shot at increasing peak voltage
//! until it fails (or the pulser runs out of range). The damage factor of a
//! shot is the sum of squared voltages of all strictly earlier shots on the
//! same device, normalized by the square of the highest failing voltage in
//! the campaign.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub device_id: String,
    pub shot_index: u32,
    /// Peak insult voltage in kV.
    pub voltage: f64,
    pub outcome: Outcome,
}

/// Shot with the damage accumulated on its device before it was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct DamagedShot {
    pub shot: ShotRecord,
    pub damage_before: f64,
}

/// Censoring interval bracketing one device's failure threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureObservation {
    pub device_id: String,
    pub last_pass_voltage: Option<f64>,
    pub fail_voltage: Option<f64>,
}

/// Validated set of shots grouped by device, in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCampaign {
    devices: Vec<(String, Vec<ShotRecord>)>,
    normalizer_voltage: f64,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    device_id: String,
    shot_index: u32,
    voltage_kv: f64,
    outcome: String,
}

pub const CSV_HEADER: [&str; 4] = ["device_id", "shot_index", "voltage_kv", "outcome"];

impl TestCampaign {
    /// Builds a campaign from shots in any order.
    ///
    /// Without an override the normalizer is the highest failing voltage;
    /// a campaign with no failures then fails with [`Error::NoFailures`].
    pub fn from_shots(shots: Vec<ShotRecord>, normalizer_override: Option<f64>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut by_device: HashMap<String, Vec<ShotRecord>> = HashMap::new();
        for shot in shots {
            if !(shot.voltage > 0.0) || !shot.voltage.is_finite() {
                return Err(Error::Campaign(format!(
                    "device `{}` shot {}: voltage must be positive, got {}",
                    shot.device_id, shot.shot_index, shot.voltage
                )));
            }
            if !by_device.contains_key(&shot.device_id) {
                order.push(shot.device_id.clone());
            }
            by_device
                .entry(shot.device_id.clone())
                .or_default()
                .push(shot);
        }

        let mut devices = Vec::with_capacity(order.len());
        let mut max_fail: Option<f64> = None;
        for id in order {
            let mut list = by_device.remove(&id).unwrap_or_default();
            list.sort_by_key(|s| s.shot_index);
            let mut seen = BTreeSet::new();
            for s in &list {
                if !seen.insert(s.shot_index) {
                    return Err(Error::Campaign(format!(
                        "duplicate shot ({id}, {})",
                        s.shot_index
                    )));
                }
            }
            for (i, s) in list.iter().enumerate() {
                if s.shot_index as usize != i + 1 {
                    return Err(Error::Campaign(format!(
                        "device `{id}`: shot indices must be consecutive from 1, found {}",
                        s.shot_index
                    )));
                }
            }
            let fails: Vec<usize> = list
                .iter()
                .enumerate()
                .filter(|(_, s)| s.outcome == Outcome::Fail)
                .map(|(i, _)| i)
                .collect();
            if fails.len() > 1 || fails.first().is_some_and(|&i| i + 1 != list.len()) {
                return Err(Error::Campaign(format!(
                    "device `{id}`: Fail not last (testing stops at the first failure)"
                )));
            }
            if let Some(&i) = fails.first() {
                let v = list[i].voltage;
                max_fail = Some(max_fail.map_or(v, |m: f64| m.max(v)));
            }
            devices.push((id, list));
        }

        let normalizer_voltage = match normalizer_override {
            Some(v) if v > 0.0 && v.is_finite() => v,
            Some(v) => {
                return Err(Error::Campaign(format!(
                    "normalizer must be positive, got {v}"
                )))
            }
            None => max_fail.ok_or(Error::NoFailures)?,
        };
        Ok(Self {
            devices,
            normalizer_voltage,
        })
    }

    /// A campaign without any shots; only the normalizer is meaningful.
    pub fn empty(normalizer_voltage: f64) -> Self {
        Self {
            devices: Vec::new(),
            normalizer_voltage,
        }
    }

    pub fn normalizer_voltage(&self) -> f64 {
        self.normalizer_voltage
    }

    /// Same shots, different damage normalizer.
    pub fn with_normalizer(&self, normalizer_voltage: f64) -> Result<Self> {
        Self::from_shots(self.shots().cloned().collect(), Some(normalizer_voltage))
    }

    pub fn device_ids(&self) -> impl Iterator<Item = &str> {
        self.devices.iter().map(|(id, _)| id.as_str())
    }

    pub fn n_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn n_shots(&self) -> usize {
        self.devices.iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn device_shots(&self, device_id: &str) -> Option<&[ShotRecord]> {
        self.devices
            .iter()
            .find(|(id, _)| id == device_id)
            .map(|(_, s)| s.as_slice())
    }

    pub fn shots(&self) -> impl Iterator<Item = &ShotRecord> {
        self.devices.iter().flat_map(|(_, s)| s.iter())
    }

    /// Union of two campaigns; device ids must not collide.
    pub fn merge(&self, other: &TestCampaign, normalizer_override: Option<f64>) -> Result<Self> {
        let shots = self.shots().chain(other.shots()).cloned().collect();
        Self::from_shots(shots, normalizer_override)
    }

    pub fn damage_factor_series(&self, device_id: &str) -> Result<Vec<DamagedShot>> {
        let shots = self
            .device_shots(device_id)
            .ok_or_else(|| Error::UnknownDevice(device_id.to_string()))?;
        let norm2 = self.normalizer_voltage * self.normalizer_voltage;
        let mut acc = 0.0;
        Ok(shots
            .iter()
            .map(|s| {
                let d = DamagedShot {
                    shot: s.clone(),
                    damage_before: acc / norm2,
                };
                acc += s.voltage * s.voltage;
                d
            })
            .collect())
    }

    pub fn failure_observations(&self) -> Vec<FailureObservation> {
        self.devices
            .iter()
            .map(|(id, shots)| {
                let last_pass_voltage = shots
                    .iter()
                    .rev()
                    .find(|s| s.outcome == Outcome::Pass)
                    .map(|s| s.voltage);
                let fail_voltage = shots
                    .iter()
                    .find(|s| s.outcome == Outcome::Fail)
                    .map(|s| s.voltage);
                FailureObservation {
                    device_id: id.clone(),
                    last_pass_voltage,
                    fail_voltage,
                }
            })
            .collect()
    }

    /// Failing-shot voltage of every device that failed.
    pub fn failure_voltages(&self) -> Vec<f64> {
        self.failure_observations()
            .into_iter()
            .filter_map(|o| o.fail_voltage)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(csv_io)?;
        for s in self.shots() {
            let outcome = match s.outcome {
                Outcome::Pass => "pass",
                Outcome::Fail => "fail",
            };
            w.write_record([
                s.device_id.as_str(),
                &s.shot_index.to_string(),
                &format_float(s.voltage),
                outcome,
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Shortest decimal that round-trips.
fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn parse_shot_csv<R: Read>(source: R) -> Result<TestCampaign> {
    parse_shot_csv_with(source, None)
}

/// Parses `device_id,shot_index,voltage_kv,outcome` rows.
pub fn parse_shot_csv_with<R: Read>(
    source: R,
    normalizer_override: Option<f64>,
) -> Result<TestCampaign> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut shots = Vec::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let outcome = match row.outcome.to_ascii_lowercase().as_str() {
            "pass" => Outcome::Pass,
            "fail" => Outcome::Fail,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("outcome must be pass or fail, got `{other}`"),
                })
            }
        };
        if !(row.voltage_kv > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("voltage must be positive, got {}", row.voltage_kv),
            });
        }
        if row.shot_index == 0 {
            return Err(Error::Parse {
                line,
                message: "shot_index starts at 1".into(),
            });
        }
        shots.push(ShotRecord {
            device_id: row.device_id,
            shot_index: row.shot_index,
            voltage: row.voltage_kv,
            outcome,
        });
    }
    TestCampaign::from_shots(shots, normalizer_override)
}
