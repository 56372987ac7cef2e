use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampler::{sample, split_rhat, ChainConfig, LogDensity, Rhat};
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyPrior, HierarchyShape, Link, ModelLayout};
use crate::kde::GaussianKde;
use crate::seed::{derive_seed, Rng};
use crate::testdata::{DamagedShot, TestCampaign};

const MAX_INIT_TRIES: usize = 10_000;

/// Posterior over the ladder coordinates of a campaign.
#[derive(Debug, Clone)]
pub struct PosteriorTarget {
    pub layout: ModelLayout,
    pub prior: HierarchyPrior,
    pub link: Link,
    data: Vec<Vec<DamagedShot>>,
    /// Replaces the ladder prior on the leading `kde.dim()` coordinates.
    kde: Option<GaussianKde>,
}

fn shots_by_slot(layout: &ModelLayout, campaign: &TestCampaign) -> Result<Vec<Vec<DamagedShot>>> {
    let mut data = vec![Vec::new(); layout.devices.len()];
    for id in campaign.device_ids() {
        let slot = layout
            .device_index(id)
            .ok_or_else(|| Error::UnknownDevice(id.to_string()))?;
        data[slot] = campaign.damage_factor_series(id)?;
    }
    Ok(data)
}

impl PosteriorTarget {
    pub fn new(
        prior: &HierarchyPrior,
        shape: &HierarchyShape,
        campaign: &TestCampaign,
        link: Link,
    ) -> Result<Self> {
        prior.validate()?;
        link.validate()?;
        let ids: Vec<String> = campaign.device_ids().map(str::to_string).collect();
        let layout = ModelLayout::new(shape, &ids, prior.gamma.is_sampled())?;
        let data = shots_by_slot(&layout, campaign)?;
        Ok(Self {
            layout,
            prior: prior.clone(),
            link,
            data,
            kde: None,
        })
    }

    /// Target whose leading coordinates follow `kde` (a previous posterior)
    /// and whose data is `campaign` alone.
    pub fn with_kde(
        layout: ModelLayout,
        prior: &HierarchyPrior,
        kde: GaussianKde,
        campaign: &TestCampaign,
        link: Link,
    ) -> Result<Self> {
        if kde.dim() > layout.dim {
            return Err(Error::Config(format!(
                "stored state has {} coordinates but the model has {}",
                kde.dim(),
                layout.dim
            )));
        }
        link.validate()?;
        let data = shots_by_slot(&layout, campaign)?;
        Ok(Self {
            layout,
            prior: prior.clone(),
            link,
            data,
            kde: Some(kde),
        })
    }

    fn prior_from(&self) -> usize {
        self.kde.as_ref().map_or(0, |k| k.dim())
    }

    pub fn n_observed_shots(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }
}

impl LogDensity for PosteriorTarget {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let from = self.prior_from();
        let Some((ladder, mut lp)) = self.layout.decode_from(&self.prior, z, from) else {
            return f64::NEG_INFINITY;
        };
        if let Some(k) = &self.kde {
            lp += k.ln_pdf(&z[..from]);
        }
        for (dev, shots) in ladder.devices.iter().zip(&self.data) {
            lp += self.link.device(dev, shots);
        }
        lp
    }

    fn initial(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        for _ in 0..MAX_INIT_TRIES {
            let z = match &self.kde {
                None => self.layout.try_draw(&self.prior, rng).map(|(z, _)| z),
                Some(k) => {
                    let mut z = k.sample(rng);
                    z.resize(self.layout.dim, 0.0);
                    self.layout
                        .try_draw_tail(&self.prior, &z, k.dim(), rng)
                        .map(|(z, _)| z)
                }
            };
            if let Some(z) = z {
                if self.log_density(&z).is_finite() {
                    return Ok(z);
                }
            }
        }
        Err(Error::Inference(format!(
            "no feasible starting point in {MAX_INIT_TRIES} prior draws"
        )))
    }

    /// Everything above the devices as one block, then each device's (a, b).
    fn blocks(&self) -> Vec<Vec<usize>> {
        let mut upper = vec![true; self.layout.dim];
        let mut out = vec![Vec::new()];
        for d in &self.layout.devices {
            upper[d.base] = false;
            upper[d.base + 1] = false;
            out.push(vec![d.base, d.base + 1]);
        }
        out[0] = (0..self.layout.dim).filter(|&i| upper[i]).collect();
        if out[0].is_empty() {
            out.remove(0);
        }
        out
    }
}

/// Retained posterior draws of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSamples {
    pub seed: u64,
    pub names: Vec<String>,
    /// Unconstrained coordinates.
    pub z: Vec<Vec<f64>>,
    /// Natural-scale values in the same order (device lines in kV).
    pub values: Vec<Vec<f64>>,
    /// Positions of the device intercepts within `values`.
    pub b0_index: Vec<usize>,
    pub acceptance: f64,
    pub warmup_acceptance: f64,
    pub warnings: Vec<String>,
}

pub fn run_chain(
    target: &PosteriorTarget,
    config: &ChainConfig,
    seed: u64,
) -> Result<ChainSamples> {
    let chain = sample(target, config, seed)?;
    let layout = &target.layout;
    let values = chain
        .samples
        .iter()
        .map(|z| {
            layout
                .decode(&target.prior, z)
                .map(|(ladder, _)| layout.flatten(&ladder))
                .ok_or_else(|| Error::Inference("retained state left the support".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainSamples {
        seed,
        names: layout.param_names(),
        z: chain.samples,
        values,
        b0_index: layout.devices.iter().map(|d| d.base + 1).collect(),
        acceptance: chain.acceptance,
        warmup_acceptance: chain.warmup_acceptance,
        warnings: chain.warnings,
    })
}

/// `config.n_chains` chains in parallel, seeded from `master_seed`.
pub fn run_chains(
    target: &PosteriorTarget,
    config: &ChainConfig,
    master_seed: u64,
) -> Result<Vec<ChainSamples>> {
    (0..config.n_chains as u64)
        .into_par_iter()
        .map(|i| run_chain(target, config, derive_seed(master_seed, "chain", i)))
        .collect()
}

/// Device intercepts of every retained iteration, all devices pooled with
/// equal weight.
pub fn marginal_b0(samples: &ChainSamples) -> Vec<f64> {
    samples
        .values
        .iter()
        .flat_map(|v| samples.b0_index.iter().map(move |&i| v[i]))
        .collect()
}

pub fn rhat(chains: &[ChainSamples], param: usize) -> Result<Rhat> {
    let cols: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c.values.iter().map(|v| v[param]).collect())
        .collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    split_rhat(&refs)
}

/// `chain,iteration,param,value`
pub fn write_chains_csv<W: Write>(chains: &[ChainSamples], out: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "chain,iteration,param,value")?;
    for (c, chain) in chains.iter().enumerate() {
        for (it, v) in chain.values.iter().enumerate() {
            for (name, x) in chain.names.iter().zip(v) {
                writeln!(w, "{c},{it},{name},{x:?}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub seeds: Vec<u64>,
    pub acceptance: Vec<f64>,
    pub warmup_acceptance: Vec<f64>,
    /// Present with two or more chains.
    pub rhat: BTreeMap<String, Rhat>,
    pub max_rhat: Option<f64>,
    pub warnings: Vec<String>,
    pub config: ChainConfig,
}

pub fn diagnostics(chains: &[ChainSamples], config: &ChainConfig) -> Diagnostics {
    let mut table = BTreeMap::new();
    if chains.len() >= 2 {
        for (j, name) in chains[0].names.iter().enumerate() {
            if let Ok(r) = rhat(chains, j) {
                table.insert(name.clone(), r);
            }
        }
    }
    let max_rhat = table.values().map(|r| r.value).reduce(f64::max);
    Diagnostics {
        seeds: chains.iter().map(|c| c.seed).collect(),
        acceptance: chains.iter().map(|c| c.acceptance).collect(),
        warmup_acceptance: chains.iter().map(|c| c.warmup_acceptance).collect(),
        rhat: table,
        max_rhat,
        warnings: chains
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.warnings.iter().map(move |w| format!("chain {i}: {w}")))
            .collect(),
        config: config.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{GammaPrior, HyperParams};

    fn prior() -> HierarchyPrior {
        HierarchyPrior::default().with_gamma(GammaPrior::Fixed(HyperParams {
            alpha: [-1.0, -0.5, 0.6, 0.4],
            beta: [4.0, 2.0, 1.0, 0.5],
        }))
    }

    fn small() -> ChainConfig {
        ChainConfig {
            warmup: 500,
            keep: 200,
            thin: 2,
            ..Default::default()
        }
    }

    #[test]
    fn pooled_count_and_feasibility() {
        let csv =
            "device_id,shot_index,voltage_kv,outcome\na,1,40,pass\na,2,50,fail\nb,1,45,fail\n";
        let c = crate::testdata::parse_shot_csv(csv.as_bytes()).unwrap();
        let t = PosteriorTarget::new(&prior(), &HierarchyShape::default(), &c, Link::default())
            .unwrap();
        let s = run_chain(&t, &small(), 4).unwrap();
        assert_eq!(s.values.len(), 200);
        assert_eq!(marginal_b0(&s).len(), 400);
        assert!(marginal_b0(&s).iter().all(|&b| b > 0.0));
        let mut buf = Vec::new();
        write_chains_csv(std::slice::from_ref(&s), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            1 + 200 * s.names.len()
        );
    }

    #[test]
    fn chains_are_reproducible() {
        let c = TestCampaign::empty(60.0);
        let t = PosteriorTarget::new(&prior(), &HierarchyShape::default(), &c, Link::default())
            .unwrap();
        let cfg = ChainConfig {
            n_chains: 2,
            ..small()
        };
        let a = run_chains(&t, &cfg, 5).unwrap();
        let b = run_chains(&t, &cfg, 5).unwrap();
        assert_eq!(a[0].z, b[0].z);
        assert_ne!(a[0].seed, a[1].seed);
        let d = diagnostics(&a, &cfg);
        assert_eq!(d.rhat.len(), a[0].names.len());
    }
}
