use std::io::Write as _;

use failmodel::baseline::{baseline_band, lse_gaussian_fit, GaussianFit};
use failmodel::failure_model::{finite_test_error, sample_failures, FailureModel, FailureOutcome};
use failmodel::hierarchy::HyperParams;
use failmodel::mcmc::{diagnostics, write_chains_csv, ChainSamples, Diagnostics};
use failmodel::pipeline::{
    fit_prior, infer, pooled_b0, posterior_model, propagate_sme_ci, sequential_update,
    PipelineConfig, PosteriorState, SmeRun,
};
use failmodel::seed::stage_rng;
use failmodel::sme::{AnchorRealization, SmeConfig};
use failmodel::stats::quantile_sorted;
use failmodel::testdata::TestCampaign;
use serde::{Deserialize, Serialize};

use crate::io::{
    load_campaign, load_config, parse_voltages, read_json, read_to_string, CliError, CliResult,
    OutDir, RunInfo,
};
use crate::{CampaignArgs, Cli, Command, ErrorSource, PriorArgs};

#[derive(Debug, Serialize, Deserialize)]
pub struct PriorFile {
    pub run: RunInfo,
    pub gamma: HyperParams,
    pub loss: f64,
    pub verified_loss: Option<f64>,
    pub anchors: AnchorRealization,
    pub n_feasible: usize,
    pub best_initial_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateFile {
    pub run: RunInfo,
    pub state: PosteriorState,
}

#[derive(Debug, Serialize)]
struct CampaignSummary<'a> {
    run: &'a RunInfo,
    devices: usize,
    shots: usize,
    failures: usize,
    normalizer_kv: f64,
    censoring: Vec<CensoringRow>,
}

#[derive(Debug, Serialize)]
struct CensoringRow {
    device_id: String,
    shots: usize,
    last_pass_kv: Option<f64>,
    fail_kv: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DiagnosticsFile<'a> {
    run: &'a RunInfo,
    #[serde(flatten)]
    diagnostics: Diagnostics,
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli.config.as_deref())?;
    let name = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Baseline { .. } => "baseline",
        Command::FitPrior { .. } => "fit-prior",
        Command::Infer { .. } => "infer",
        Command::Error { .. } => "error",
        Command::Sample { .. } => "sample",
        Command::Update { .. } => "update",
    };
    let out = OutDir::create(&cli.out, RunInfo::new(name, &config, cli.seed))?;
    let seed = cli.seed;
    match &cli.command {
        Command::Ingest(data) => cmd_ingest(data, &out),
        Command::Baseline { data, level } => cmd_baseline(data, *level, &config, &out),
        Command::FitPrior { sme } => {
            let sme: SmeConfig = read_json(sme)?;
            fit_and_write_prior(&sme, &config, seed, &out).map(|_| ())
        }
        Command::Infer {
            data,
            prior,
            chains,
            write_chains,
        } => cmd_infer(data, prior, *chains, *write_chains, config, seed, &out),
        Command::Error {
            data,
            prior,
            source,
            chains,
            realizations,
        } => cmd_error(
            data,
            prior,
            *source,
            *chains,
            *realizations,
            config,
            seed,
            &out,
        ),
        Command::Sample { model, voltages } => cmd_sample(model, voltages, seed, &out),
        Command::Update {
            state,
            campaign,
            chains,
        } => cmd_update(state, campaign, *chains, config, seed, &out),
    }
}

fn stamp(model: FailureModel, run: &RunInfo) -> FailureModel {
    model
        .with_meta("command", &run.command)
        .with_meta("config_sha256", &run.config_sha256)
        .with_meta("master_seed", run.master_seed)
}

fn write_model(out: &OutDir, stem: &str, model: &FailureModel) -> CliResult<()> {
    out.write_json(&format!("{stem}.json"), model)?;
    out.write_csv(&format!("{stem}.csv"), |w| model.write_csv(w))?;
    Ok(())
}

fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

fn cmd_ingest(data: &CampaignArgs, out: &OutDir) -> CliResult<()> {
    let c = load_campaign(&data.campaign, data.normalizer_kv)?;
    let censoring: Vec<CensoringRow> = c
        .failure_observations()
        .into_iter()
        .map(|o| CensoringRow {
            shots: c.device_shots(&o.device_id).map_or(0, <[_]>::len),
            device_id: o.device_id,
            last_pass_kv: o.last_pass_voltage,
            fail_kv: o.fail_voltage,
        })
        .collect();
    let summary = CampaignSummary {
        run: out.run(),
        devices: c.n_devices(),
        shots: c.n_shots(),
        failures: c.failure_voltages().len(),
        normalizer_kv: c.normalizer_voltage(),
        censoring,
    };
    println!(
        "{} devices, {} shots, {} failures, normalizer {} kV",
        summary.devices, summary.shots, summary.failures, summary.normalizer_kv
    );
    println!(
        "{:<16} {:>5} {:>12} {:>10}",
        "device", "shots", "last_pass_kV", "fail_kV"
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x}"));
    for r in &summary.censoring {
        println!(
            "{:<16} {:>5} {:>12} {:>10}",
            r.device_id,
            r.shots,
            fmt(r.last_pass_kv),
            fmt(r.fail_kv)
        );
    }
    out.write_json("campaign_summary.json", &summary)?;
    Ok(())
}

fn cmd_baseline(
    data: &CampaignArgs,
    level: f64,
    config: &PipelineConfig,
    out: &OutDir,
) -> CliResult<()> {
    let c = load_campaign(&data.campaign, data.normalizer_kv)?;
    let fit: GaussianFit = lse_gaussian_fit(&c.failure_voltages())?;
    let model = stamp(baseline_band(&fit, level, &config.grid)?, out.run());
    write_model(out, "baseline_model", &model)?;
    println!(
        "mu = {:.4} kV, sigma = {:.4} kV, n = {}",
        fit.mu, fit.sigma, fit.n
    );
    Ok(())
}

fn fit_and_write_prior(
    sme: &SmeConfig,
    config: &PipelineConfig,
    seed: u64,
    out: &OutDir,
) -> CliResult<HyperParams> {
    let anchors = sme.anchor_set()?;
    let realization = anchors.means();
    let bo = fit_prior(&realization, config, seed)?;
    out.write_csv("bo_trace.csv", |w| bo.trace.write_csv(w))?;
    let file = PriorFile {
        run: out.run().clone(),
        gamma: bo.gamma,
        loss: bo.loss,
        verified_loss: bo.verified_loss,
        anchors: realization,
        n_feasible: bo.trace.n_feasible(),
        best_initial_loss: bo.trace.best_initial(),
    };
    out.write_json("prior.json", &file)?;
    let gamma: Vec<String> = bo
        .gamma
        .to_vec()
        .iter()
        .map(|g| format!("{g:.4}"))
        .collect();
    println!("gamma* = [{}]", gamma.join(", "));
    println!(
        "loss {:.6} (best initial {}), {} feasible of {}",
        bo.loss,
        file.best_initial_loss
            .map_or("none".into(), |l| format!("{l:.6}")),
        file.n_feasible,
        bo.trace.entries.len()
    );
    Ok(bo.gamma)
}

fn resolve_gamma(
    prior: &PriorArgs,
    config: &PipelineConfig,
    seed: u64,
    out: &OutDir,
) -> CliResult<HyperParams> {
    match (&prior.prior, &prior.sme) {
        (Some(p), _) => Ok(read_json::<PriorFile>(p)?.gamma),
        (None, Some(s)) => fit_and_write_prior(&read_json(s)?, config, seed, out),
        (None, None) => Err(CliError::usage("either --prior or --sme is required")),
    }
}

fn report_chains(chains: &[ChainSamples], config: &PipelineConfig, out: &OutDir) -> CliResult<()> {
    let diagnostics = diagnostics(chains, &config.chain);
    let acceptance: Vec<String> = diagnostics
        .acceptance
        .iter()
        .map(|a| format!("{a:.3}"))
        .collect();
    println!(
        "posterior b0 median {:.3} kV; acceptance [{}]; max R-hat {}",
        median(&pooled_b0(chains)),
        acceptance.join(", "),
        diagnostics
            .max_rhat
            .map_or("n/a".into(), |r| format!("{r:.4}"))
    );
    for w in &diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    out.write_json(
        "diagnostics.json",
        &DiagnosticsFile {
            run: out.run(),
            diagnostics,
        },
    )?;
    Ok(())
}

fn with_chains(mut config: PipelineConfig, chains: Option<usize>) -> CliResult<PipelineConfig> {
    if let Some(n) = chains {
        config.chain.n_chains = n;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_infer(
    data: &CampaignArgs,
    prior: &PriorArgs,
    chains: Option<usize>,
    write_chains: bool,
    config: PipelineConfig,
    seed: u64,
    out: &OutDir,
) -> CliResult<()> {
    let config = with_chains(config, chains)?;
    let campaign = load_campaign(&data.campaign, data.normalizer_kv)?;
    let gamma = resolve_gamma(prior, &config, seed, out)?;
    let (target, chains) = infer(&campaign, &config.posterior_prior(&gamma), &config, seed)?;
    let model = stamp(posterior_model(&chains, &config)?, out.run());
    write_model(out, "posterior_model", &model)?;
    let state = PosteriorState::from_chains(
        &target,
        &chains,
        campaign.normalizer_voltage(),
        config.state_samples,
    );
    out.write_json(
        "posterior_state.json",
        &StateFile {
            run: out.run().clone(),
            state,
        },
    )?;
    if write_chains {
        out.write_csv("chains.csv", |w| write_chains_csv(&chains, w))?;
    }
    report_chains(&chains, &config, out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_error(
    data: &CampaignArgs,
    prior: &PriorArgs,
    source: ErrorSource,
    chains: Option<usize>,
    realizations: Option<usize>,
    config: PipelineConfig,
    seed: u64,
    out: &OutDir,
) -> CliResult<()> {
    let campaign = load_campaign(&data.campaign, data.normalizer_kv)?;
    match source {
        ErrorSource::Dkw => {
            let config = with_chains(config, chains)?;
            let gamma = resolve_gamma(prior, &config, seed, out)?;
            let (_, chains) = infer(&campaign, &config.posterior_prior(&gamma), &config, seed)?;
            let model = stamp(posterior_model(&chains, &config)?, out.run());
            print_band(&model);
            write_model(out, "error_dkw", &model)?;
            report_chains(&chains, &config, out)
        }
        ErrorSource::FiniteTest => {
            let n = chains.unwrap_or(config.chain.n_chains.max(4));
            let config = with_chains(config, Some(n))?;
            if n < 2 {
                return Err(CliError::usage(
                    "finite-test error needs --chains 2 or more",
                ));
            }
            let gamma = resolve_gamma(prior, &config, seed, out)?;
            let (_, chains) = infer(&campaign, &config.posterior_prior(&gamma), &config, seed)?;
            let model = finite_test_error(&chains, config.fit_method, &config.grid, config.band)?;
            let model = stamp(model, out.run());
            print_band(&model);
            write_model(out, "error_finite_test", &model)?;
            report_chains(&chains, &config, out)
        }
        ErrorSource::Sme => {
            let path = prior
                .sme
                .as_ref()
                .ok_or_else(|| CliError::usage("--source sme needs --sme <anchors.json>"))?;
            let sme: SmeConfig = read_json(path)?;
            let run = SmeRun {
                scheme: sme.scheme,
                n_realizations: realizations.unwrap_or(config.n_realizations),
                identical_streams: false,
            };
            let result = propagate_sme_ci(&sme.anchor_set()?, &run, &campaign, &config, seed)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let model = stamp(result.model, out.run());
            print_band(&model);
            write_model(out, "error_sme", &model)?;
            out.write_json("sme_realizations.json", &result.realizations)?;
            Ok(())
        }
    }
}

fn print_band(model: &FailureModel) {
    if let Some(b) = &model.band {
        let width = b
            .high
            .iter()
            .zip(&b.low)
            .map(|(h, l)| h - l)
            .fold(0.0, f64::max);
        let sources: Vec<String> = model.provenance.iter().map(|p| format!("{p:?}")).collect();
        println!("{} band, max width {width:.4}", sources.join("+"));
    }
}

fn cmd_sample(
    model: &std::path::Path,
    voltages: &std::path::Path,
    seed: u64,
    out: &OutDir,
) -> CliResult<()> {
    let model: FailureModel = read_json(model)?;
    model.validate()?;
    let v = parse_voltages(voltages, &read_to_string(voltages)?)?;
    let outcomes = sample_failures(&model, &v, &mut stage_rng(seed, "sample", 0));
    let fails = outcomes
        .iter()
        .filter(|o| **o == FailureOutcome::Fail)
        .count();
    out.write_csv("outcomes.csv", |w| {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "voltage_kv,outcome")?;
        for (x, o) in v.iter().zip(&outcomes) {
            writeln!(w, "{x:?},{}", o.as_str())?;
        }
        w.flush()?;
        Ok(())
    })?;
    println!("{} voltages, {fails} failures", v.len());
    Ok(())
}

fn cmd_update(
    state: &std::path::Path,
    campaign: &std::path::Path,
    chains: Option<usize>,
    config: PipelineConfig,
    seed: u64,
    out: &OutDir,
) -> CliResult<()> {
    let config = with_chains(config, chains)?;
    let previous: StateFile = read_json(state)?;
    let new_data: TestCampaign = load_campaign(campaign, Some(previous.state.normalizer_voltage))?;
    let outcome = sequential_update(&previous.state, &new_data, &config, seed)?;
    let model = stamp(outcome.model, out.run());
    write_model(out, "updated_model", &model)?;
    out.write_json(
        "posterior_state.json",
        &StateFile {
            run: out.run().clone(),
            state: outcome.state,
        },
    )?;
    report_chains(&outcome.chains, &config, out)
}
