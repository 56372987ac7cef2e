//! Parameter ladder γ → group → device and its unconstrained coordinates.
//!
//! Every ladder parameter lives on an interval fixed by the parameters
//! above it, and is mapped to the real line by `x = lo + (hi - lo)·σ(z)`.
//! A coordinate vector `z` therefore always decodes to a ladder; invalid
//! combinations (an inverted uniform, γ outside a dependent bound) decode
//! to `None`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bounds::{row_symbol, Sym, SymValues};
use super::params::{DeviceParams, GammaPrior, HierarchyPrior, HyperParams, MidParams};
use crate::error::{Error, Result};
use crate::stats::{ln_logistic, logistic, TruncatedNormal};

/// Assignment of devices to class / brand / model groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyShape {
    /// Number of group levels between γ and the devices (1 to 3). Depths
    /// above 1 are experimental.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// device id → group path of length `depth`; unlisted devices go to
    /// the default path.
    #[serde(default)]
    pub assignments: BTreeMap<String, Vec<String>>,
}

fn default_depth() -> usize {
    1
}

impl Default for HierarchyShape {
    fn default() -> Self {
        Self {
            depth: 1,
            assignments: BTreeMap::new(),
        }
    }
}

pub const DEFAULT_GROUP: &str = "default";
/// Placeholder device of a campaign without devices.
pub const UNOBSERVED_DEVICE: &str = "unobserved";

impl HierarchyShape {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.depth) {
            return Err(Error::Config(format!(
                "hierarchy depth {} not in 1..=3",
                self.depth
            )));
        }
        for (dev, path) in &self.assignments {
            if path.len() != self.depth {
                return Err(Error::Config(format!(
                    "device {dev}: group path has {} levels, depth is {}",
                    path.len(),
                    self.depth
                )));
            }
        }
        Ok(())
    }

    pub fn path_of(&self, device_id: &str) -> Vec<String> {
        self.assignments
            .get(device_id)
            .cloned()
            .unwrap_or_else(|| vec![DEFAULT_GROUP.to_string(); self.depth])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupNode {
    pub path: Vec<String>,
    pub parent: Option<usize>,
    /// first of four coordinates (μ_a, r_a, μ_b, r_b)
    pub base: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSlot {
    pub id: String,
    pub node: usize,
    /// first of two coordinates (a, b)
    pub base: usize,
}

/// Coordinate layout of the ladder for a set of devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub sample_gamma: bool,
    pub nodes: Vec<GroupNode>,
    pub devices: Vec<DeviceSlot>,
    pub dim: usize,
}

/// Decoded parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    pub gamma: HyperParams,
    pub nodes: Vec<MidParams>,
    /// kV
    pub devices: Vec<DeviceParams>,
}

impl ModelLayout {
    /// Layout for `device_ids`; an empty list yields one unobserved device
    /// in the default group.
    pub fn new(shape: &HierarchyShape, device_ids: &[String], sample_gamma: bool) -> Result<Self> {
        shape.validate()?;
        let ids: Vec<String> = if device_ids.is_empty() {
            vec![UNOBSERVED_DEVICE.to_string()]
        } else {
            device_ids.to_vec()
        };
        let mut layout = Self {
            sample_gamma,
            nodes: Vec::new(),
            devices: Vec::new(),
            dim: if sample_gamma { 8 } else { 0 },
        };
        let paths: Vec<Vec<String>> = ids.iter().map(|id| shape.path_of(id)).collect();
        // nodes level by level so parents precede children
        for level in 1..=shape.depth {
            let mut prefixes: Vec<Vec<String>> =
                paths.iter().map(|p| p[..level].to_vec()).collect();
            prefixes.sort();
            prefixes.dedup();
            for p in prefixes {
                layout.push_node(p);
            }
        }
        for (id, path) in ids.into_iter().zip(paths) {
            layout.push_device(id, &path)?;
        }
        Ok(layout)
    }

    fn find_node(&self, path: &[String]) -> Option<usize> {
        self.nodes.iter().position(|n| n.path == path)
    }

    fn push_node(&mut self, path: Vec<String>) -> usize {
        if let Some(k) = self.find_node(&path) {
            return k;
        }
        let parent = if path.len() > 1 {
            Some(self.push_node(path[..path.len() - 1].to_vec()))
        } else {
            None
        };
        self.nodes.push(GroupNode {
            path,
            parent,
            base: self.dim,
        });
        self.dim += 4;
        self.nodes.len() - 1
    }

    fn push_device(&mut self, id: String, path: &[String]) -> Result<()> {
        if self.devices.iter().any(|d| d.id == id) {
            return Err(Error::Config(format!("device {id} listed twice")));
        }
        let node = self.push_node(path.to_vec());
        self.devices.push(DeviceSlot {
            id,
            node,
            base: self.dim,
        });
        self.dim += 2;
        Ok(())
    }

    /// Appends devices (and groups) not yet present; existing coordinates
    /// keep their positions.
    pub fn extended(&self, shape: &HierarchyShape, device_ids: &[String]) -> Result<Self> {
        shape.validate()?;
        let mut out = self.clone();
        for id in device_ids {
            if out.device_index(id).is_none() {
                let path = shape.path_of(id);
                if path.len() != self.depth() {
                    return Err(Error::Config(
                        "hierarchy depth differs from stored state".into(),
                    ));
                }
                out.push_device(id.clone(), &path)?;
            }
        }
        Ok(out)
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.path.len()).max().unwrap_or(1)
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.dim];
        if self.sample_gamma {
            for (i, n) in names.iter_mut().take(8).enumerate() {
                *n = row_symbol(i).name().to_string();
            }
        }
        for node in &self.nodes {
            let p = node.path.join("/");
            for (j, s) in ["mu_a", "r_a", "mu_b", "r_b"].iter().enumerate() {
                names[node.base + j] = format!("{s}[{p}]");
            }
        }
        for d in &self.devices {
            names[d.base] = format!("a0[{}]", d.id);
            names[d.base + 1] = format!("b0[{}]", d.id);
        }
        names
    }

    /// Natural-scale values in coordinate order (device lines in kV).
    pub fn flatten(&self, ladder: &Ladder) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if self.sample_gamma {
            out[..8].copy_from_slice(&ladder.gamma.to_vec());
        }
        for (node, m) in self.nodes.iter().zip(&ladder.nodes) {
            out[node.base..node.base + 4].copy_from_slice(&[m.mu_a, m.r_a, m.mu_b, m.r_b]);
        }
        for (d, p) in self.devices.iter().zip(&ladder.devices) {
            out[d.base] = p.a0;
            out[d.base + 1] = p.b0;
        }
        out
    }

    /// Ladder and ln prior density of `z` (Jacobian included), counting
    /// only coordinates with index ≥ `density_from`.
    pub fn decode_from(
        &self,
        prior: &HierarchyPrior,
        z: &[f64],
        density_from: usize,
    ) -> Option<(Ladder, f64)> {
        debug_assert_eq!(z.len(), self.dim);
        let mut src = Decoder {
            z,
            density_from,
            acc: 0.0,
        };
        let ladder = self.walk(prior, &mut src)?;
        src.acc.is_finite().then_some((ladder, src.acc))
    }

    pub fn decode(&self, prior: &HierarchyPrior, z: &[f64]) -> Option<(Ladder, f64)> {
        self.decode_from(prior, z, 0)
    }

    /// One forward draw of the whole ladder; `None` when it violated a
    /// constraint and must be redone.
    pub fn try_draw<R: rand::Rng + ?Sized>(
        &self,
        prior: &HierarchyPrior,
        rng: &mut R,
    ) -> Option<(Vec<f64>, Ladder)> {
        let mut src = Drawer {
            rng,
            z: vec![0.0; self.dim],
            fixed: None,
        };
        let ladder = self.walk(prior, &mut src)?;
        Some((src.z, ladder))
    }

    /// Forward draw of the coordinates from `from` on, holding the earlier
    /// ones at `z`.
    pub fn try_draw_tail<R: rand::Rng + ?Sized>(
        &self,
        prior: &HierarchyPrior,
        z: &[f64],
        from: usize,
        rng: &mut R,
    ) -> Option<(Vec<f64>, Ladder)> {
        let mut src = Drawer {
            rng,
            z: z.to_vec(),
            fixed: Some(from),
        };
        let ladder = self.walk(prior, &mut src)?;
        Some((src.z, ladder))
    }

    pub fn draw<R: rand::Rng + ?Sized>(
        &self,
        prior: &HierarchyPrior,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<(Vec<f64>, Ladder)> {
        for _ in 0..max_attempts {
            if let Some(d) = self.try_draw(prior, rng) {
                return Ok(d);
            }
        }
        Err(Error::Infeasible {
            reason: "no feasible draw of the parameter ladder".into(),
            accepted: 0,
            attempts: max_attempts,
        })
    }

    fn walk<S: Source>(&self, prior: &HierarchyPrior, src: &mut S) -> Option<Ladder> {
        let bounds = &prior.bounds;
        let mut ctx = SymValues::default();
        let mut gamma = HyperParams::zeros();
        let mut nodes = vec![
            MidParams {
                mu_a: 0.0,
                r_a: 0.0,
                mu_b: 0.0,
                r_b: 0.0
            };
            self.nodes.len()
        ];
        let root = self.nodes.first()?;

        let row =
            |i: usize, ctx: &mut SymValues, gamma: &mut HyperParams, src: &mut S| -> Option<()> {
                let (lo, hi) = bounds.row(i).resolve(ctx)?;
                let x = match &prior.gamma {
                    GammaPrior::Fixed(g) => {
                        let x = g.get(i);
                        if !(x >= lo && x <= hi) {
                            return None;
                        }
                        x
                    }
                    GammaPrior::Truncated { center, spread } => {
                        if !(lo < hi) {
                            return None;
                        }
                        src.take(
                            i,
                            lo,
                            hi,
                            Some((center.get(i), spread * bounds.row(i).scale)),
                        )?
                    }
                };
                gamma.set(i, x);
                ctx.set(row_symbol(i), x);
                Some(())
            };

        row(0, &mut ctx, &mut gamma, src)?;
        row(1, &mut ctx, &mut gamma, src)?;
        if gamma.alpha[1] > 0.0 {
            return None;
        }
        let mu_a = src.take(
            root.base,
            gamma.alpha[0] + gamma.alpha[1],
            gamma.alpha[0],
            None,
        )?;
        ctx.set(Sym::MuA, mu_a);
        row(2, &mut ctx, &mut gamma, src)?;
        row(3, &mut ctx, &mut gamma, src)?;
        row(4, &mut ctx, &mut gamma, src)?;
        row(5, &mut ctx, &mut gamma, src)?;
        if gamma.beta[1] < 0.0 {
            return None;
        }
        let mu_b = src.take(
            root.base + 2,
            gamma.beta[0],
            gamma.beta[0] + gamma.beta[1],
            None,
        )?;
        ctx.set(Sym::MuB, mu_b);
        row(6, &mut ctx, &mut gamma, src)?;
        row(7, &mut ctx, &mut gamma, src)?;
        if !gamma.is_feasible() {
            return None;
        }
        let [_, _, a3, a4] = gamma.alpha;
        let [b1, b2, b3, b4] = gamma.beta;
        let r_a = src.take(root.base + 1, a3, a3 + a4, None)?;
        let r_b = src.take(root.base + 3, b3, b3 + b4, None)?;
        nodes[0] = MidParams {
            mu_a,
            r_a,
            mu_b,
            r_b,
        };
        if !nodes[0].is_feasible() {
            return None;
        }

        for (k, node) in self.nodes.iter().enumerate().skip(1) {
            let b = node.base;
            let m = match node.parent {
                None => {
                    let [a1, a2, ..] = gamma.alpha;
                    let m = MidParams {
                        mu_a: src.take(b, a1 + a2, a1, None)?,
                        r_a: src.take(b + 1, a3, a3 + a4, None)?,
                        mu_b: src.take(b + 2, b1, b1 + b2, None)?,
                        r_b: src.take(b + 3, b3, b3 + b4, None)?,
                    };
                    if !gamma.within_bounds(bounds, m.mu_a, m.mu_b) {
                        return None;
                    }
                    m
                }
                Some(p) => {
                    let pm = nodes[p];
                    MidParams {
                        mu_a: src.take(b, pm.mu_a - 0.5 * pm.r_a, pm.mu_a + 0.5 * pm.r_a, None)?,
                        r_a: src.take(b + 1, 0.0, pm.r_a, None)?,
                        mu_b: src.take(
                            b + 2,
                            pm.mu_b - 0.5 * pm.r_b,
                            pm.mu_b + 0.5 * pm.r_b,
                            None,
                        )?,
                        r_b: src.take(b + 3, 0.0, pm.r_b, None)?,
                    }
                }
            };
            if !m.is_feasible() {
                return None;
            }
            nodes[k] = m;
        }

        let unit = prior.voltage_unit_kv;
        let mut devices = Vec::with_capacity(self.devices.len());
        for d in &self.devices {
            let m = nodes[d.node];
            let a = src.take(d.base, m.mu_a - 0.5 * m.r_a, m.mu_a + 0.5 * m.r_a, None)?;
            let b_hi = m.mu_b + 0.5 * m.r_b;
            let b_lo = (m.mu_b - 0.5 * m.r_b).max(0.0);
            let b = src.take(d.base + 1, b_lo, b_hi, None)?;
            if !(b > 0.0) {
                return None;
            }
            devices.push(DeviceParams {
                a0: a.abs() * unit,
                b0: b * unit,
            });
        }
        Some(Ladder {
            gamma,
            nodes,
            devices,
        })
    }
}

/// Supplies the value of each coordinate on its resolved interval.
trait Source {
    /// `tn` carries (mean, sd) for truncated-normal coordinates; uniform
    /// otherwise. `None` means the interval is inverted.
    fn take(&mut self, idx: usize, lo: f64, hi: f64, tn: Option<(f64, f64)>) -> Option<f64>;
}

#[inline]
fn ln_dlogistic(z: f64) -> f64 {
    ln_logistic(z) + ln_logistic(-z)
}

struct Decoder<'a> {
    z: &'a [f64],
    density_from: usize,
    acc: f64,
}

impl Source for Decoder<'_> {
    fn take(&mut self, idx: usize, lo: f64, hi: f64, tn: Option<(f64, f64)>) -> Option<f64> {
        if !(lo <= hi) {
            return None;
        }
        let z = self.z[idx];
        if idx >= self.density_from {
            // every coordinate is its conditional CDF pushed through a logit
            self.acc += ln_dlogistic(z);
        }
        place(lo, hi, tn, z)
    }
}

/// Value at unconstrained `z` of a coordinate with support `[lo, hi]`:
/// the conditional quantile at `logistic(z)`.
fn place(lo: f64, hi: f64, tn: Option<(f64, f64)>, z: f64) -> Option<f64> {
    if hi == lo {
        return Some(lo);
    }
    let u = logistic(z);
    Some(match tn {
        None => (lo + (hi - lo) * u).clamp(lo, hi),
        Some((mu, sd)) => TruncatedNormal::new(mu, sd, lo, hi).ok()?.quantile(u),
    })
}

struct Drawer<'a, R: rand::Rng + ?Sized> {
    rng: &'a mut R,
    z: Vec<f64>,
    /// coordinates below this index are held at their current value
    fixed: Option<usize>,
}

impl<R: rand::Rng + ?Sized> Source for Drawer<'_, R> {
    fn take(&mut self, idx: usize, lo: f64, hi: f64, tn: Option<(f64, f64)>) -> Option<f64> {
        if !(lo <= hi) {
            return None;
        }
        if self.fixed.is_some_and(|from| idx < from) {
            return place(lo, hi, tn, self.z[idx]);
        }
        let u = self.rng.random::<f64>().clamp(1e-15, 1.0 - 1e-15);
        self.z[idx] = (u / (1.0 - u)).ln();
        place(lo, hi, tn, self.z[idx])
    }
}
