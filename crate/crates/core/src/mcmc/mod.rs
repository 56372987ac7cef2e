//! Posterior sampling over the parameter ladder.

mod posterior;
mod sampler;

pub use posterior::{
    diagnostics, marginal_b0, rhat, run_chain, run_chains, write_chains_csv, ChainSamples,
    Diagnostics, PosteriorTarget,
};
pub use sampler::{
    sample, split_rhat, BlockProposal, Chain, ChainConfig, LogDensity, Proposal, Rhat,
};
