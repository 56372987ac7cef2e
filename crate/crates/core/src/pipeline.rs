//! End-to-end runs: prior fitting, inference, error propagation and
//! sequential updating, driven by one configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bopt::{optimize_prior, BoConfig, BoResult};
use crate::cdf::{CdfCurve, GridSpec};
use crate::error::{Error, Result};
use crate::failure_model::{
    band_across, band_label, dkw_band, fit_cdf, BandKind, FailureModel, FitMethod, Provenance,
};
use crate::hierarchy::{
    GammaPrior, HierarchyPrior, HierarchyShape, HyperBounds, HyperParams, Link, ModelLayout,
};
use crate::kde::GaussianKde;
use crate::mcmc::{marginal_b0, run_chain, run_chains, ChainConfig, ChainSamples, PosteriorTarget};
use crate::seed::{derive_seed, stage_rng};
use crate::sme::{sample_realization, AnchorRealization, SamplingScheme, SmeAnchorSet};
use crate::testdata::TestCampaign;

/// Everything a run needs besides data, anchors and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub bounds: HyperBounds,
    /// kV per model voltage unit of the group level.
    pub voltage_unit_kv: f64,
    /// Width of the posterior γ prior around the fitted γ*, in units of
    /// each row's scale; 0 holds γ at γ*.
    pub gamma_spread: f64,
    pub shape: HierarchyShape,
    pub link: Link,
    pub bo: BoConfig,
    pub chain: ChainConfig,
    pub fit_method: FitMethod,
    pub grid: GridSpec,
    pub band: BandKind,
    /// Confidence parameter of DKW bands.
    pub dkw_alpha: f64,
    pub n_realizations: usize,
    /// Posterior states kept for sequential updates.
    pub state_samples: usize,
    /// KDE centers used when a stored posterior becomes the prior.
    pub kde_centers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bounds: HyperBounds::default(),
            voltage_unit_kv: 10.0,
            gamma_spread: 0.1,
            shape: HierarchyShape::default(),
            link: Link::default(),
            bo: BoConfig::default(),
            chain: ChainConfig::default(),
            fit_method: FitMethod::Empirical,
            grid: GridSpec::default(),
            band: BandKind::NormalApprox,
            dkw_alpha: 0.05,
            n_realizations: 8,
            state_samples: 4_000,
            kde_centers: 1_000,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.template().validate()?;
        self.shape.validate()?;
        self.link.validate()?;
        self.bo.validate()?;
        self.chain.validate()?;
        if !(self.gamma_spread >= 0.0) {
            return Err(Error::Config("gamma_spread must be non-negative".into()));
        }
        if !(self.dkw_alpha > 0.0 && self.dkw_alpha < 1.0) {
            return Err(Error::Config("dkw_alpha must lie in (0, 1)".into()));
        }
        if self.state_samples < 2 || self.kde_centers < 2 {
            return Err(Error::Config(
                "state_samples and kde_centers must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Table prior over γ with the configured bounds and unit.
    pub fn template(&self) -> HierarchyPrior {
        HierarchyPrior {
            bounds: self.bounds.clone(),
            gamma: GammaPrior::table(),
            voltage_unit_kv: self.voltage_unit_kv,
        }
    }

    /// Prior used for inference once γ* is known.
    pub fn posterior_prior(&self, gamma: &HyperParams) -> HierarchyPrior {
        self.template()
            .with_gamma(GammaPrior::centered(*gamma, self.gamma_spread))
    }
}

pub fn fit_prior(
    realization: &AnchorRealization,
    config: &PipelineConfig,
    seed: u64,
) -> Result<BoResult> {
    optimize_prior(
        realization,
        &config.template(),
        &config.bo,
        &mut stage_rng(seed, "bo", 0),
    )
}

/// Posterior chains for `campaign` under `prior`.
pub fn infer(
    campaign: &TestCampaign,
    prior: &HierarchyPrior,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(PosteriorTarget, Vec<ChainSamples>)> {
    let target = PosteriorTarget::new(prior, &config.shape, campaign, config.link)?;
    let chains = run_chains(&target, &config.chain, derive_seed(seed, "mcmc", 0))?;
    Ok((target, chains))
}

/// Pooled zero-damage thresholds of all chains.
pub fn pooled_b0(chains: &[ChainSamples]) -> Vec<f64> {
    chains.iter().flat_map(marginal_b0).collect()
}

/// Posterior CDF of the pooled thresholds with a DKW band.
///
/// The band uses n = retained iterations across chains; devices within one
/// iteration are not independent draws.
pub fn posterior_model(chains: &[ChainSamples], config: &PipelineConfig) -> Result<FailureModel> {
    let b0 = pooled_b0(chains);
    let fitted = fit_cdf(&b0, config.fit_method, &config.grid)?;
    let n: usize = chains.iter().map(|c| c.values.len()).sum();
    let mut model = dkw_band(&fitted.curve, n as u64, config.dkw_alpha)?;
    model.fit_method = config.fit_method;
    Ok(model
        .with_meta(
            "chain_seeds",
            chains.iter().map(|c| c.seed).collect::<Vec<_>>(),
        )
        .with_meta("pooled_samples", b0.len())
        .with_meta("warnings", fitted.warnings))
}

/// Posterior summary reusable as the prior of a later update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorState {
    pub layout: ModelLayout,
    pub prior: HierarchyPrior,
    pub link: Link,
    pub normalizer_voltage: f64,
    /// Retained unconstrained states, evenly thinned across chains.
    pub z: Vec<Vec<f64>>,
}

impl PosteriorState {
    pub fn from_chains(
        target: &PosteriorTarget,
        chains: &[ChainSamples],
        normalizer_voltage: f64,
        keep: usize,
    ) -> Self {
        let all: Vec<&Vec<f64>> = chains.iter().flat_map(|c| c.z.iter()).collect();
        let step = all.len().div_ceil(keep.max(1)).max(1);
        Self {
            layout: target.layout.clone(),
            prior: target.prior.clone(),
            link: target.link,
            normalizer_voltage,
            z: all.into_iter().step_by(step).cloned().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.len() < 2 {
            return Err(Error::InsufficientData(
                "stored posterior has fewer than two states".into(),
            ));
        }
        if self.z.iter().any(|z| z.len() != self.layout.dim) {
            return Err(Error::Config(format!(
                "stored states do not match the stored layout dimension {}",
                self.layout.dim
            )));
        }
        if self.prior.gamma.is_sampled() != self.layout.sample_gamma {
            return Err(Error::Config(
                "stored prior and layout disagree on γ sampling".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub model: FailureModel,
    pub chains: Vec<ChainSamples>,
    pub state: PosteriorState,
}

/// Treats a stored posterior as the prior for new data; no prior refit.
///
/// The stored states are smoothed by a Gaussian KDE on the unconstrained
/// coordinates. Devices new to the model join their group with fresh
/// parameters; known device ids keep theirs. Damage factors of the new
/// data use the stored normalizer voltage.
pub fn sequential_update(
    previous: &PosteriorState,
    new_data: &TestCampaign,
    config: &PipelineConfig,
    seed: u64,
) -> Result<UpdateOutcome> {
    previous.validate()?;
    let campaign = new_data.with_normalizer(previous.normalizer_voltage)?;
    let ids: Vec<String> = campaign.device_ids().map(str::to_string).collect();
    let layout = previous.layout.extended(&config.shape, &ids)?;
    let kde = GaussianKde::fit(&previous.z, config.kde_centers)?;
    let bandwidth = kde.bandwidth();
    let target = PosteriorTarget::with_kde(layout, &previous.prior, kde, &campaign, previous.link)?;
    let chains = run_chains(&target, &config.chain, derive_seed(seed, "update", 0))?;
    let model = posterior_model(&chains, config)?
        .with_meta("kde_bandwidth", bandwidth)
        .with_meta(
            "kde_bandwidth_rule",
            "silverman, full covariance, shrunk centers",
        );
    let state = PosteriorState::from_chains(
        &target,
        &chains,
        previous.normalizer_voltage,
        config.state_samples,
    );
    Ok(UpdateOutcome {
        model,
        chains,
        state,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizationSummary {
    pub index: usize,
    pub probs: Vec<f64>,
    pub gamma: HyperParams,
    pub loss: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone)]
pub struct SmePropagation {
    pub model: FailureModel,
    pub realizations: Vec<RealizationSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmeRun {
    pub scheme: SamplingScheme,
    pub n_realizations: usize,
    /// Every realization uses the stream of realization 0.
    pub identical_streams: bool,
}

/// Repeats prior fit → inference for anchor realizations drawn within the
/// experts' confidence intervals and summarizes the spread of the posterior
/// CDFs.
pub fn propagate_sme_ci(
    anchors: &SmeAnchorSet,
    run: &SmeRun,
    campaign: &TestCampaign,
    config: &PipelineConfig,
    seed: u64,
) -> Result<SmePropagation> {
    if run.n_realizations < 2 {
        return Err(Error::InvalidArgument(
            "SME propagation needs at least two realizations".into(),
        ));
    }
    config.validate()?;
    let single = ChainConfig {
        n_chains: 1,
        ..config.chain.clone()
    };
    let results: Vec<Result<(RealizationSummary, Vec<f64>)>> = (0..run.n_realizations)
        .into_par_iter()
        .map(|r| {
            let s = if run.identical_streams { 0 } else { r as u64 };
            let real = sample_realization(
                anchors,
                run.scheme,
                &mut stage_rng(seed, "sme-realization", s),
            )?;
            let bo = optimize_prior(
                &real,
                &config.template(),
                &config.bo,
                &mut stage_rng(seed, "sme-bo", s),
            )?;
            let prior = config.posterior_prior(&bo.gamma);
            let target = PosteriorTarget::new(&prior, &config.shape, campaign, config.link)?;
            let chain = run_chain(&target, &single, derive_seed(seed, "sme-chain", s))?;
            let summary = RealizationSummary {
                index: r,
                probs: real.probs,
                gamma: bo.gamma,
                loss: bo.loss,
                acceptance: chain.acceptance,
            };
            Ok((summary, marginal_b0(&chain)))
        })
        .collect();

    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => kept.push(v),
            Err(e) => warnings.push(format!("realization {r} dropped: {e}")),
        }
    }
    if kept.is_empty() {
        return Err(Error::Optimization(format!(
            "all {} SME realizations failed",
            run.n_realizations
        )));
    }
    let all: Vec<f64> = kept.iter().flat_map(|(_, b)| b.iter().copied()).collect();
    let grid = GridSpec::Explicit(config.grid.resolve(&all)?);
    let curves: Vec<CdfCurve> = kept
        .iter()
        .map(|(_, b)| fit_cdf(b, config.fit_method, &grid).map(|f| f.curve))
        .collect::<Result<_>>()?;
    let (curve, band) = band_across(&curves, config.band)?;
    let realizations: Vec<RealizationSummary> = kept.into_iter().map(|(s, _)| s).collect();
    let model = FailureModel::new(curve, config.fit_method)
        .with_band(band, Provenance::SmeEstimate)?
        .with_meta("band_construction", band_label(config.band))
        .with_meta("realizations", realizations.len())
        .with_meta("warnings", &warnings);
    Ok(SmePropagation {
        model,
        realizations,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_defaults() {
        let c: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.chain.warmup, 10_000);
        assert_eq!(c.chain.keep, 20_000);
        let s = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn spread_zero_fixes_gamma() {
        let c = PipelineConfig {
            gamma_spread: 0.0,
            ..Default::default()
        };
        assert!(!c.posterior_prior(&HyperParams::zeros()).gamma.is_sampled());
    }
}
