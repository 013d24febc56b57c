//! Adversarial patches against monocular depth estimation.

pub mod asset_io;
pub mod assets;
pub mod attack_loss;
pub mod cli;
pub mod defenses;
pub mod geometry;
pub mod mask;
pub mod mde;
pub mod metrics;
pub mod nn;
pub mod optimizer;
pub mod plot;
pub mod pseudolidar;
pub mod resample;
pub mod styleloss;
pub mod tensor;
