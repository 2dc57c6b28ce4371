//! Bayesian polytomous item response models: SPRITE plus the ORD, LORD, NRM
//! and GPCM baselines, fitted by Metropolis-within-Gibbs sampling.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod infotools;
pub mod likelihood;
pub mod math;
pub mod params;
pub mod rng;
pub mod sampler;
pub mod synthgen;

pub use config::{AcceptanceMode, FitConfig, Hyperparams, Initialization};
pub use data::{ResponseMatrix, Sidecar};
pub use error::{Error, Result};
pub use likelihood::{CategoryDistribution, CellAssignment};
pub use params::{GpcmParams, ModelKind, ModelParams, NrmParams, OrdParams, SpriteParams};
