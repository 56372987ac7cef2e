//! Bayesian optimization of the hyperparameters γ so that the prior
//! predictive CDF passes through the expert anchors.

mod gp;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gp::{expected_improvement, Surrogate};

use crate::cdf::CdfCurve;
use crate::error::{Error, Result};
use crate::hierarchy::{hyper_from_unit, prior_b0_draws, GammaPrior, HierarchyPrior, HyperParams};
use crate::seed::rng_from_seed;
use crate::sme::AnchorRealization;

/// Probabilities are clipped to [EPS_CLIP, 1 - EPS_CLIP] before taking logs.
pub const EPS_CLIP: f64 = 1e-6;

/// CDF values at the anchor voltages, clipped away from 0 and 1.
pub fn align_cdf(curve: &CdfCurve, voltages: &[f64]) -> Result<Vec<f64>> {
    if curve.is_empty() {
        return Err(Error::InvalidArgument("empty curve".into()));
    }
    Ok(voltages
        .iter()
        .map(|&v| curve.eval(v).clamp(EPS_CLIP, 1.0 - EPS_CLIP))
        .collect())
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// −Σ yᵢ ln ŷᵢ.
pub fn cross_entropy(y_sme: &[f64], y_lambda: &[f64]) -> Result<f64> {
    check_lengths(y_sme, y_lambda)?;
    Ok(-y_sme
        .iter()
        .zip(y_lambda)
        .map(|(y, q)| y * q.ln())
        .sum::<f64>())
}

/// −Σ [yᵢ ln ŷᵢ + (1 − yᵢ) ln(1 − ŷᵢ)].
pub fn binary_cross_entropy(y_sme: &[f64], y_lambda: &[f64]) -> Result<f64> {
    check_lengths(y_sme, y_lambda)?;
    Ok(-y_sme
        .iter()
        .zip(y_lambda)
        .map(|(y, q)| y * q.ln() + (1.0 - y) * (1.0 - q).ln())
        .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Both the failure and survival probabilities at each anchor.
    #[default]
    Binary,
    /// Failure probabilities only.
    OneSided,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSpec {
    #[serde(default)]
    pub kind: LossKind,
    /// Per-anchor weights; empty means all 1.
    #[serde(default)]
    pub weights: Vec<f64>,
}

impl LossSpec {
    pub fn loss(&self, y_sme: &[f64], y_lambda: &[f64]) -> Result<f64> {
        check_lengths(y_sme, y_lambda)?;
        if !self.weights.is_empty() && self.weights.len() != y_sme.len() {
            return Err(Error::Config(format!(
                "{} anchor weights for {} anchors",
                self.weights.len(),
                y_sme.len()
            )));
        }
        let mut total = 0.0;
        for i in 0..y_sme.len() {
            let w = self.weights.get(i).copied().unwrap_or(1.0);
            let (y, q) = (&y_sme[i..=i], &y_lambda[i..=i]);
            total += w * match self.kind {
                LossKind::Binary => binary_cross_entropy(y, q)?,
                LossKind::OneSided => cross_entropy(y, q)?,
            };
        }
        Ok(total)
    }
}

/// One evaluation of the objective; `loss` is `None` for infeasible γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSample {
    pub gamma: HyperParams,
    pub loss: Option<f64>,
    pub n_draws: usize,
}

/// Loss of the prior predictive CDF of fixed γ against an anchor realization.
///
/// `template` supplies the bounds and voltage unit; its γ prior is ignored.
pub fn evaluate_objective<R: rand::Rng + ?Sized>(
    template: &HierarchyPrior,
    gamma: &HyperParams,
    realization: &AnchorRealization,
    loss: &LossSpec,
    n_draws: usize,
    rng: &mut R,
) -> ObjectiveSample {
    let prior = template.with_gamma(GammaPrior::Fixed(*gamma));
    let loss = prior_b0_draws(&prior, n_draws, rng)
        .ok()
        .and_then(|(b0, _)| CdfCurve::empirical(&b0, realization.voltages.clone()).ok())
        .and_then(|curve| align_cdf(&curve, &realization.voltages).ok())
        .and_then(|aligned| loss.loss(&realization.probs, &aligned).ok())
        .filter(|l| l.is_finite());
    ObjectiveSample {
        gamma: *gamma,
        loss,
        n_draws,
    }
}

/// Settings of the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Total objective evaluations including the initial design.
    pub budget: usize,
    pub initial_design: usize,
    pub n_draws: usize,
    /// Draws used to re-evaluate the final incumbent.
    pub verify_draws: usize,
    /// Per-row contraction of constant bounds about their midpoint.
    pub shrink: Option<[f64; 8]>,
    pub loss: LossSpec,
    /// Random candidates scored by the acquisition function per iteration.
    pub candidates: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 80,
            initial_design: 16,
            n_draws: 4_000,
            verify_draws: 20_000,
            shrink: None,
            loss: LossSpec::default(),
            candidates: 4_096,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_design == 0 || self.budget < self.initial_design {
            return Err(Error::Config(
                "BO budget must be at least the initial design size (> 0)".into(),
            ));
        }
        if self.n_draws == 0 || self.verify_draws == 0 {
            return Err(Error::Config("BO draw counts must be positive".into()));
        }
        Ok(())
    }
}

/// Latin hypercube of `n` points in the unit cube.
pub fn latin_hypercube<R: rand::Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        for (i, p) in pts.iter_mut().enumerate() {
            p[d] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Acquisition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub x: Vec<f64>,
    pub y: Option<f64>,
    pub phase: Phase,
}

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    pub budget: usize,
    pub initial_design: usize,
    pub candidates: usize,
    /// Model ln y instead of y (objective must be positive).
    pub log_y: bool,
}

/// GP/EI minimization over the unit cube.
///
/// `f` returns `None` at infeasible points, which are kept out of the
/// surrogate. `admissible` screens acquisition candidates before they are
/// evaluated.
pub fn minimize<F, A, R>(
    dim: usize,
    f: F,
    admissible: A,
    opts: &MinimizeOptions,
    rng: &mut R,
) -> Vec<Evaluation>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
    A: Fn(&[f64]) -> bool,
    R: rand::Rng + ?Sized,
{
    let design = latin_hypercube(opts.initial_design, dim, rng);
    let ys: Vec<Option<f64>> = design.par_iter().map(|x| f(x)).collect();
    let mut history: Vec<Evaluation> = design
        .into_iter()
        .zip(ys)
        .map(|(x, y)| Evaluation {
            x,
            y,
            phase: Phase::Initial,
        })
        .collect();
    let tr = |y: f64| if opts.log_y { y.max(1e-300).ln() } else { y };

    while history.len() < opts.budget {
        let (xs, ts): (Vec<Vec<f64>>, Vec<f64>) = history
            .iter()
            .filter_map(|e| e.y.map(|y| (e.x.clone(), tr(y))))
            .unzip();
        let next = Surrogate::fit(&xs, &ts)
            .and_then(|gp| propose(&gp, &xs, &ts, dim, &admissible, opts.candidates, rng))
            .unwrap_or_else(|| {
                (0..1000)
                    .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect::<Vec<_>>())
                    .find(|x| admissible(x))
                    .unwrap_or_else(|| (0..dim).map(|_| rng.random::<f64>()).collect())
            });
        let y = f(&next);
        history.push(Evaluation {
            x: next,
            y,
            phase: Phase::Acquisition,
        });
    }
    history
}

fn propose<A, R>(
    gp: &Surrogate,
    xs: &[Vec<f64>],
    ts: &[f64],
    dim: usize,
    admissible: &A,
    n_candidates: usize,
    rng: &mut R,
) -> Option<Vec<f64>>
where
    A: Fn(&[f64]) -> bool,
    R: rand::Rng + ?Sized,
{
    let best = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
    let mut cands: Vec<Vec<f64>> = (0..n_candidates)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let normal = rand_distr::StandardNormal;
    for &i in order.iter().take(5) {
        for sd in [0.1, 0.03, 0.01] {
            for _ in 0..n_candidates / 32 {
                let c = xs[i]
                    .iter()
                    .map(|&v| {
                        let e: f64 = rng.sample(normal);
                        (v + sd * e).clamp(0.0, 1.0)
                    })
                    .collect();
                cands.push(c);
            }
        }
    }
    cands
        .into_iter()
        .filter(|c| admissible(c))
        .map(|c| {
            let (m, v) = gp.predict(&c);
            (expected_improvement(m, v, best), c)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub unit: Vec<f64>,
    pub gamma: Option<HyperParams>,
    pub loss: Option<f64>,
    /// Best feasible loss so far.
    pub incumbent: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub entries: Vec<TraceEntry>,
}

impl BoTrace {
    fn from_history(history: &[Evaluation], gammas: Vec<Option<HyperParams>>) -> Self {
        let mut inc: Option<f64> = None;
        let entries = history
            .iter()
            .zip(gammas)
            .enumerate()
            .map(|(i, (e, gamma))| {
                if let Some(y) = e.y {
                    inc = Some(inc.map_or(y, |b| b.min(y)));
                }
                TraceEntry {
                    iteration: i,
                    phase: e.phase,
                    unit: e.x.clone(),
                    gamma,
                    loss: e.y,
                    incumbent: inc,
                }
            })
            .collect();
        Self { entries }
    }

    pub fn n_feasible(&self) -> usize {
        self.entries.iter().filter(|e| e.loss.is_some()).count()
    }

    pub fn best_initial(&self) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.phase == Phase::Initial)
            .filter_map(|e| e.loss)
            .reduce(f64::min)
    }

    pub fn incumbent(&self) -> Option<f64> {
        self.entries.last().and_then(|e| e.incumbent)
    }

    /// `iteration,phase,feasible,loss,incumbent,alpha1..beta4`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["iteration", "phase", "feasible", "loss", "incumbent"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..8).map(|i| crate::hierarchy::row_symbol(i).name().to_string()));
        w.write_record(&header).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for e in &self.entries {
            let mut rec = vec![
                e.iteration.to_string(),
                match e.phase {
                    Phase::Initial => "initial",
                    Phase::Acquisition => "acquisition",
                }
                .to_string(),
                e.loss.is_some().to_string(),
                opt(e.loss),
                opt(e.incumbent),
            ];
            rec.extend((0..8).map(|i| opt(e.gamma.map(|g| g.get(i)))));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoResult {
    pub gamma: HyperParams,
    /// Loss of `gamma` during the search.
    pub loss: f64,
    /// Loss of `gamma` re-evaluated with `verify_draws` draws.
    pub verified_loss: Option<f64>,
    pub trace: BoTrace,
}

/// Searches γ over the (optionally shrunk) bounds of `template`.
///
/// All evaluations share one objective stream (common random numbers), so
/// differences between candidates are not masked by sampling noise.
pub fn optimize_prior<R: rand::Rng + ?Sized>(
    realization: &AnchorRealization,
    template: &HierarchyPrior,
    config: &BoConfig,
    rng: &mut R,
) -> Result<BoResult> {
    config.validate()?;
    template.validate()?;
    if let Some(w) = (!config.loss.weights.is_empty()).then_some(&config.loss.weights) {
        if w.len() != realization.probs.len() {
            return Err(Error::Config(
                "anchor weight count differs from anchor count".into(),
            ));
        }
    }
    let bounds = match &config.shrink {
        Some(f) => template.bounds.shrink(f)?,
        None => template.bounds.clone(),
    };
    let prior = HierarchyPrior {
        bounds: bounds.clone(),
        ..template.clone()
    };
    let objective_seed: u64 = rng.random();
    let f = |u: &[f64]| {
        let g = hyper_from_unit(&bounds, u)?;
        evaluate_objective(
            &prior,
            &g,
            realization,
            &config.loss,
            config.n_draws,
            &mut rng_from_seed(objective_seed),
        )
        .loss
    };
    let opts = MinimizeOptions {
        budget: config.budget,
        initial_design: config.initial_design,
        candidates: config.candidates,
        log_y: true,
    };
    let history = minimize(8, f, |u| hyper_from_unit(&bounds, u).is_some(), &opts, rng);
    let gammas = history
        .iter()
        .map(|e| hyper_from_unit(&bounds, &e.x))
        .collect();
    let trace = BoTrace::from_history(&history, gammas);
    let best = trace
        .entries
        .iter()
        .filter(|e| e.loss.is_some())
        .min_by(|a, b| a.loss.unwrap().total_cmp(&b.loss.unwrap()))
        .ok_or_else(|| Error::Infeasible {
            reason: "no feasible hyperparameters found within the BO budget".into(),
            accepted: 0,
            attempts: config.budget,
        })?;
    let gamma = best.gamma.expect("feasible entries carry γ");
    let loss = best.loss.unwrap();
    let verified_loss = evaluate_objective(
        &prior,
        &gamma,
        realization,
        &config.loss,
        config.verify_draws,
        rng,
    )
    .loss;
    Ok(BoResult {
        gamma,
        loss,
        verified_loss,
        trace,
    })
}
