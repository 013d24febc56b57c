//! Alternating optimization of patch pixels and mask regions.

mod lbfgs;
mod region;
mod run;

pub use lbfgs::{Lbfgs, NonFiniteGradient};
pub use region::{select_edge, RegionAdam};
pub use run::{
    eval_batch_size, evaluation_draws, objective, run_attack, sample_specs, style_context, write_artifacts,
    AttackError, AttackOutcome, AttackState, LogRow, Sampler, ThetaFile, PLACEMENT_RETRIES,
};
