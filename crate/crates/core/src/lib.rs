//! Margin-adaptive direct preference optimization on a synthetic preference world.
//!
//! The crate is organised bottom-up:
//!
//! - [`losses`]: coefficient, adaptive weight, DPO / IPO / MADPO losses and their
//!   derivatives in the implicit margin.
//! - [`world`]: feature-vector prompts and responses, a bounded ground-truth reward,
//!   Gumbel-noise annotators and the three dataset quality tiers.
//! - [`reward`]: the linear Bradley-Terry reward model (step one).
//! - [`policy`]: a log-linear tilt of a frozen reference and best-of-k evaluation.
//! - [`trainer`]: mini-batch training for every loss, β-DPO's batch machinery, and
//!   the two-step pipeline (step two).
//! - [`verify`]: numerical certificates for optimal targets, derivative bounds and
//!   Lipschitz constants.
//! - [`experiment`]: one (method, tier, seed) cell end to end.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod losses;
pub mod numeric;
pub mod optim;
pub mod policy;
pub mod provenance;
pub mod reward;
pub mod rng;
pub mod trainer;
pub mod verify;
pub mod world;

pub use error::{Error, Result};
pub use losses::{Ablation, LossKind, WeightConfig};
pub use world::{PreferenceRecord, Tier, World, WorldConfig};
