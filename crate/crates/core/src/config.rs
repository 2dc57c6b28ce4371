//! Prior hyperparameters and sampler tuning.
//!
//! Prior variances and proposal scales live in separate types: the same
//! symbols are commonly reused for both roles, but they are independent knobs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Mean of the Gaussian prior on SPRITE, NRM and GPCM traits.
    pub prior_trait_mean: f64,
    pub prior_trait_var: f64,
    /// Variance of the Gaussian prior on sprite means, and on the NRM/GPCM
    /// discriminations and difficulties.
    pub prior_mean_var: f64,
    /// Inverse-gamma shape and scale for sprite variances.
    pub prior_var_shape: f64,
    pub prior_var_scale: f64,
    pub ord_prior_trait_var: f64,
    pub ord_prior_diff_var: f64,
    pub ord_prior_bin_var: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            prior_trait_mean: 0.0,
            prior_trait_var: 1.0,
            prior_mean_var: 1.0,
            prior_var_shape: 1.0,
            prior_var_scale: 1.0,
            ord_prior_trait_var: 1.0,
            ord_prior_diff_var: 1.0,
            ord_prior_bin_var: 4.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !self.prior_trait_mean.is_finite() {
            return Err(Error::InvalidConfig("prior_trait_mean must be finite".into()));
        }
        let positive = [
            ("prior_trait_var", self.prior_trait_var),
            ("prior_mean_var", self.prior_mean_var),
            ("prior_var_shape", self.prior_var_shape),
            ("prior_var_scale", self.prior_var_scale),
            ("ord_prior_trait_var", self.ord_prior_trait_var),
            ("ord_prior_diff_var", self.ord_prior_diff_var),
            ("ord_prior_bin_var", self.ord_prior_bin_var),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Accept/reject granularity of the Metropolis step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcceptanceMode {
    /// One MH step per respondent trait and one per question block.
    #[default]
    Blockwise,
    /// A single MH step over all traits and question parameters at once.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Initialization {
    /// Traits and means at 0, variances at 1, bins at normal quantiles,
    /// identity permutations.
    #[default]
    Deterministic,
    /// Random starting values drawn from the `init` substream.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub burn_in_iterations: usize,
    pub sample_iterations: usize,
    /// Random-walk sd for respondent traits.
    pub proposal_trait_sd: f64,
    /// Random-walk sd for sprite means and every question-level location
    /// parameter of the baseline models (difficulties, bins, discriminations).
    pub proposal_mean_sd: f64,
    /// Inverse-gamma proposal shape for sprite variances; must exceed 1.
    pub proposal_var_shape: f64,
    pub rng_seed: u64,
    pub acceptance_mode: AcceptanceMode,
    pub initialization: Initialization,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            burn_in_iterations: 20_000,
            sample_iterations: 5_000,
            proposal_trait_sd: 0.5,
            proposal_mean_sd: 0.15,
            proposal_var_shape: 40.0,
            rng_seed: 0,
            acceptance_mode: AcceptanceMode::Blockwise,
            initialization: Initialization::Deterministic,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_iterations == 0 {
            return Err(Error::NoSamples);
        }
        for (name, v) in [
            ("proposal_trait_sd", self.proposal_trait_sd),
            ("proposal_mean_sd", self.proposal_mean_sd),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.proposal_var_shape.is_finite() && self.proposal_var_shape > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "proposal_var_shape must exceed 1, got {}",
                self.proposal_var_shape
            )));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.burn_in_iterations + self.sample_iterations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Hyperparams::default().validate().unwrap();
        FitConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_iterations_is_no_samples() {
        let cfg = FitConfig {
            burn_in_iterations: 0,
            sample_iterations: 0,
            ..FitConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err(), Error::NoSamples);
    }

    #[test]
    fn proposal_shape_must_exceed_one() {
        let cfg = FitConfig {
            proposal_var_shape: 1.0,
            ..FitConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: FitConfig = serde_json::from_str(r#"{"rng_seed": 9, "acceptance_mode": "joint"}"#).unwrap();
        assert_eq!(cfg.rng_seed, 9);
        assert_eq!(cfg.acceptance_mode, AcceptanceMode::Joint);
        assert_eq!(cfg.burn_in_iterations, FitConfig::default().burn_in_iterations);
    }
}
