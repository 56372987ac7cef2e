//! Monotone CDF curves tabulated on a voltage grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl CdfCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "curve needs equal, non-zero grid/value lengths ({} vs {})",
                grid.len(),
                values.len()
            )));
        }
        check_grid(&grid)?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "CDF values must lie in [0, 1]".into(),
            ));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "CDF values must be non-decreasing".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    /// Clips to [0, 1] and applies a running maximum before validating.
    pub fn from_raw(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, monotonize(values))
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Linear interpolation on the grid; 0 below the first grid point and 1
    /// above the last.
    pub fn eval(&self, v: f64) -> f64 {
        let g = &self.grid;
        let n = g.len();
        if v < g[0] {
            return 0.0;
        }
        if v > g[n - 1] {
            return 1.0;
        }
        let i = g.partition_point(|&x| x <= v);
        if i == 0 {
            return self.values[0];
        }
        if i >= n {
            return self.values[n - 1];
        }
        let (x0, x1) = (g[i - 1], g[i]);
        let (y0, y1) = (self.values[i - 1], self.values[i]);
        y0 + (y1 - y0) * (v - x0) / (x1 - x0)
    }

    /// Right-continuous empirical CDF of `samples` on `grid`.
    pub fn empirical(samples: &[f64], grid: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "empirical CDF of zero samples".into(),
            ));
        }
        check_grid(&grid)?;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let values = grid
            .iter()
            .map(|&v| sorted.partition_point(|&x| x <= v) as f64 / n)
            .collect();
        Self::new(grid, values)
    }

    /// Largest absolute difference between two curves on the union of their grids.
    pub fn sup_distance(&self, other: &CdfCurve) -> f64 {
        self.grid
            .iter()
            .chain(other.grid.iter())
            .map(|&v| (self.eval(v) - other.eval(v)).abs())
            .fold(0.0, f64::max)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "voltage grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Clip to [0, 1] then running maximum.
pub fn monotonize(mut values: Vec<f64>) -> Vec<f64> {
    let mut run = 0.0f64;
    for v in values.iter_mut() {
        let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        run = run.max(c);
        *v = run;
    }
    values
}

pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// How the voltage grid of a fitted curve is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Explicit(Vec<f64>),
    /// `points` evenly spaced points covering the sample range, padded on
    /// both sides by `pad_fraction` of the range.
    Auto {
        points: usize,
        pad_fraction: f64,
    },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto {
            points: 241,
            pad_fraction: 0.1,
        }
    }
}

impl GridSpec {
    pub fn resolve(&self, samples: &[f64]) -> Result<Vec<f64>> {
        match self {
            GridSpec::Explicit(g) => {
                check_grid(g)?;
                Ok(g.clone())
            }
            GridSpec::Auto {
                points,
                pad_fraction,
            } => {
                if *points < 2 || samples.is_empty() {
                    return Err(Error::InvalidArgument(
                        "auto grid needs >= 2 points and samples".into(),
                    ));
                }
                let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let span = (hi - lo).max(1e-6 * hi.abs().max(1.0));
                let pad = span * pad_fraction.max(0.0);
                Ok(linspace((lo - pad).max(0.0).min(lo), hi + pad, *points))
            }
        }
    }
}
