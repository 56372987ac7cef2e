//! Adaptive random-walk Metropolis.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, Rng};

/// Unnormalized log density on ℝᵈ; `-inf` outside the support.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    /// A starting state with finite density.
    fn initial(&self, rng: &mut Rng) -> Result<Vec<f64>>;
    /// Coordinate groups that get their own Metropolis step after every
    /// joint step. Empty means joint steps only.
    fn blocks(&self) -> Vec<Vec<usize>> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub warmup: usize,
    pub keep: usize,
    /// Iterations per retained sample after warmup.
    pub thin: usize,
    pub n_chains: usize,
    /// Initial proposal sd per coordinate.
    pub init_scale: f64,
    /// Warmup iterations between proposal covariance refreshes.
    pub adapt_window: usize,
    pub target_acceptance: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            warmup: 10_000,
            keep: 20_000,
            thin: 10,
            n_chains: 1,
            init_scale: 0.1,
            adapt_window: 50,
            target_acceptance: 0.3,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 || self.keep == 0 || self.thin == 0 || self.n_chains == 0 {
            return Err(Error::Config(
                "warmup, keep, thin and n_chains must be positive".into(),
            ));
        }
        if !(self.init_scale > 0.0)
            || !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0)
        {
            return Err(Error::Config(
                "init_scale must be positive and target_acceptance in (0, 1)".into(),
            ));
        }
        if self.adapt_window == 0 {
            return Err(Error::Config("adapt_window must be positive".into()));
        }
        Ok(())
    }
}

/// Proposal frozen at the end of warmup: `x' = x + scale·L·ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub scale: f64,
    /// Lower Cholesky factor, column-major.
    pub chol: Vec<f64>,
    /// Per-block proposals acting on `indices` only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockProposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockProposal {
    pub indices: Vec<usize>,
    pub scale: f64,
    pub chol: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub seed: u64,
    pub samples: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub warmup_acceptance: f64,
    /// Post-warmup acceptance of the joint steps.
    pub acceptance: f64,
    /// Post-warmup acceptance of each block's steps.
    #[serde(default)]
    pub block_acceptance: Vec<f64>,
    pub proposal: Proposal,
    pub warnings: Vec<String>,
}

struct Walker<'a, D: LogDensity + ?Sized> {
    target: &'a D,
    x: Vec<f64>,
    lp: f64,
    buf: Vec<f64>,
}

impl<D: LogDensity + ?Sized> Walker<'_, D> {
    /// One Metropolis step moving `idx` (all coordinates when `None`);
    /// returns the acceptance probability and whether the move was taken.
    fn step(
        &mut self,
        idx: Option<&[usize]>,
        scale: f64,
        chol: &DMatrix<f64>,
        rng: &mut Rng,
    ) -> (f64, bool) {
        let eps = DVector::<f64>::from_fn(chol.nrows(), |_, _| rng.sample(StandardNormal));
        let delta = chol * eps;
        self.buf.copy_from_slice(&self.x);
        match idx {
            None => {
                for (b, d) in self.buf.iter_mut().zip(delta.iter()) {
                    *b += scale * d;
                }
            }
            Some(idx) => {
                for (&i, d) in idx.iter().zip(delta.iter()) {
                    self.buf[i] += scale * d;
                }
            }
        }
        let lp_new = self.target.log_density(&self.buf);
        let log_ratio = lp_new - self.lp;
        let a = if log_ratio.is_nan() {
            0.0
        } else {
            log_ratio.min(0.0).exp()
        };
        let u: f64 = rng.random();
        if lp_new.is_finite() && u < a {
            std::mem::swap(&mut self.x, &mut self.buf);
            self.lp = lp_new;
            (a, true)
        } else {
            (a, false)
        }
    }
}

/// Robbins–Monro scale plus Cholesky factor of one proposal.
struct Tuned {
    idx: Option<Vec<usize>>,
    chol: DMatrix<f64>,
    log_scale: f64,
    accepted: usize,
}

impl Tuned {
    fn new(idx: Option<Vec<usize>>, dim: usize, init_scale: f64) -> Self {
        Self {
            idx,
            chol: DMatrix::identity(dim, dim) * init_scale,
            log_scale: 0.0,
            accepted: 0,
        }
    }

    fn dim(&self) -> usize {
        self.chol.nrows()
    }
}

fn jittered_cholesky(mut cov: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = cov.nrows();
    let jitter = 1e-10 * (cov.trace() / d as f64).max(1e-12);
    for i in 0..d {
        cov[(i, i)] += jitter;
    }
    cov.cholesky().map(|c| c.l())
}

/// Runs one chain: adapted warmup, then `keep·thin` iterations with every
/// proposal frozen, retaining every `thin`-th state.
///
/// An iteration is one joint step followed by one step per block of
/// [`LogDensity::blocks`]. Each proposal has its own Robbins–Monro scale;
/// all share one empirical covariance estimate.
pub fn sample<D: LogDensity + ?Sized>(
    target: &D,
    config: &ChainConfig,
    seed: u64,
) -> Result<Chain> {
    config.validate()?;
    let d = target.dim();
    let mut rng = rng_from_seed(seed);
    let x0 = target.initial(&mut rng)?;
    if x0.len() != d {
        return Err(Error::Inference(format!(
            "initial state has {} coordinates, expected {d}",
            x0.len()
        )));
    }
    let lp0 = target.log_density(&x0);
    if !lp0.is_finite() {
        return Err(Error::Inference("initial state has zero density".into()));
    }
    let mut w = Walker {
        target,
        x: x0,
        lp: lp0,
        buf: vec![0.0; d],
    };

    let mut props = vec![Tuned::new(None, d, config.init_scale)];
    for b in target.blocks() {
        if b.is_empty() || b.iter().any(|&i| i >= d) {
            return Err(Error::Inference("block indices out of range".into()));
        }
        let k = b.len();
        props.push(Tuned::new(Some(b), k, config.init_scale));
    }

    // covariance estimate starts after the initial transient
    let cov_start = config.warmup / 5;
    let mut mean = DVector::<f64>::zeros(d);
    let mut m2 = DMatrix::<f64>::zeros(d, d);
    let mut count = 0usize;
    let mut switched = false;
    for t in 0..config.warmup {
        let gain = 1.0 / ((t + 1) as f64).powf(0.6);
        for p in props.iter_mut() {
            let (a, acc) = w.step(p.idx.as_deref(), p.log_scale.exp(), &p.chol, &mut rng);
            p.accepted += acc as usize;
            p.log_scale = (p.log_scale + gain * (a - config.target_acceptance)).clamp(-20.0, 20.0);
        }
        if t < cov_start {
            continue;
        }
        count += 1;
        let xv = DVector::from_column_slice(&w.x);
        let delta = &xv - &mean;
        mean += &delta / count as f64;
        let delta2 = &xv - &mean;
        m2 += &delta * delta2.transpose();
        if count > 2 * d + 10 && (t + 1) % config.adapt_window == 0 {
            let cov = &m2 / (count - 1) as f64;
            for p in props.iter_mut() {
                let sub = match &p.idx {
                    None => Some(cov.clone()),
                    Some(idx) => Some(cov.select_rows(idx.iter()).select_columns(idx.iter())),
                };
                if let Some(l) = sub.and_then(jittered_cholesky) {
                    let k = p.dim() as f64;
                    p.chol = l * (2.38 / k.sqrt());
                    if !switched {
                        // the empirical covariance already carries the scale
                        p.log_scale = 0.0;
                    }
                }
            }
            switched = true;
        }
    }
    let warmup_acceptance = props[0].accepted as f64 / config.warmup as f64;

    for p in props.iter_mut() {
        p.accepted = 0;
    }
    let mut samples = Vec::with_capacity(config.keep);
    let mut lps = Vec::with_capacity(config.keep);
    let total = config.keep * config.thin;
    for t in 0..total {
        for p in props.iter_mut() {
            p.accepted += w
                .step(p.idx.as_deref(), p.log_scale.exp(), &p.chol, &mut rng)
                .1 as usize;
        }
        if (t + 1) % config.thin == 0 {
            samples.push(w.x.clone());
            lps.push(w.lp);
        }
    }
    let rate = |p: &Tuned| p.accepted as f64 / total as f64;
    let acceptance = rate(&props[0]);
    let block_acceptance: Vec<f64> = props[1..].iter().map(rate).collect();
    let mut warnings = Vec::new();
    if acceptance < 0.01 {
        warnings.push(format!(
            "post-warmup acceptance {acceptance:.4} is below 0.01"
        ));
    } else if acceptance > 0.95 {
        warnings.push(format!(
            "post-warmup acceptance {acceptance:.4} is above 0.95"
        ));
    }
    let mut props = props.into_iter();
    let joint = props.next().expect("joint proposal");
    Ok(Chain {
        seed,
        samples,
        log_density: lps,
        warmup_acceptance,
        acceptance,
        block_acceptance,
        proposal: Proposal {
            scale: joint.log_scale.exp(),
            chol: joint.chol.as_slice().to_vec(),
            blocks: props
                .map(|p| BlockProposal {
                    indices: p.idx.unwrap_or_default(),
                    scale: p.log_scale.exp(),
                    chol: p.chol.as_slice().to_vec(),
                })
                .collect(),
        },
        warnings,
    })
}

/// Split-R̂ of one scalar across chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rhat {
    pub value: f64,
    /// Set when the statistic is undefined (no variance anywhere) and
    /// reported as 1.
    pub degenerate: bool,
}

pub fn split_rhat(chains: &[&[f64]]) -> Result<Rhat> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument(
            "R-hat needs at least two chains".into(),
        ));
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(
            "R-hat needs equal chain lengths of at least 4".into(),
        ));
    }
    if chains.iter().all(|c| *c == chains[0]) {
        return Ok(Rhat {
            value: 1.0,
            degenerate: true,
        });
    }
    let half = n / 2;
    let parts: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect();
    let m = parts.len() as f64;
    let len = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / len).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = len / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = parts
        .iter()
        .zip(&means)
        .map(|(p, mu)| p.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (len - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 {
            Rhat {
                value: 1.0,
                degenerate: true,
            }
        } else {
            Rhat {
                value: f64::INFINITY,
                degenerate: false,
            }
        });
    }
    let var_plus = (len - 1.0) / len * w + b / len;
    Ok(Rhat {
        value: (var_plus / w).sqrt(),
        degenerate: false,
    })
}
