//! Hierarchical model: hyperparameters γ, group-level location/range
//! parameters and per-device separating lines, with the shot likelihood.

mod bounds;
mod layout;
mod likelihood;
mod params;
mod predictive;

pub use bounds::{row_symbol, Bound, BoundRow, HyperBounds, LinearExpr, Sym, SymValues};
pub use layout::{
    DeviceSlot, GroupNode, HierarchyShape, Ladder, ModelLayout, DEFAULT_GROUP, UNOBSERVED_DEVICE,
};
pub use likelihood::{campaign_log_likelihood, shot_log_likelihood, Link, LinkKind};
pub use params::{
    hyper_from_unit, sample_device, sample_hyperparams, sample_mid, threshold_voltage,
    DeviceParams, GammaPrior, HierarchyPrior, HyperDraw, HyperParams, MidParams,
};
pub use predictive::{prior_b0_draws, prior_predictive_cdf, PriorPredictive, ATTEMPTS_PER_DRAW};
