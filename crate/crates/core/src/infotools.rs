//! Mutual information between the latent trait and a SPRITE question's
//! response, and tabulation of category response curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::sprite_log_probs;
use crate::math::log_normal_pdf;
use crate::params::SpriteParams;

/// Half-width of the integration range, in prior standard deviations.
pub const RANGE_SDS: f64 = 8.0;

/// Default number of quadrature points.
pub const DEFAULT_RESOLUTION: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionInformation {
    /// 0-based question index.
    pub question: usize,
    pub mi_bits: f64,
    pub quadrature_points: usize,
    pub estimated_error: f64,
}

fn check_sprites(means: &[f64], variances: &[f64]) -> Result<()> {
    if means.len() != variances.len() {
        return Err(Error::DimensionMismatch("means and variances differ in length".into()));
    }
    if means.len() < 2 {
        return Err(Error::InvalidParameter("at least two categories required".into()));
    }
    if means.iter().chain(variances).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("sprite parameters"));
    }
    if variances.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidParameter("sprite variances must be positive".into()));
    }
    Ok(())
}

/// MI in bits by composite Simpson on `points` (odd) nodes.
fn simpson_mi(means: &[f64], variances: &[f64], prior_mean: f64, prior_var: f64, points: usize) -> Result<f64> {
    let m = means.len();
    let half = RANGE_SDS * prior_var.sqrt();
    let (lo, hi) = (prior_mean - half, prior_mean + half);
    let h = (hi - lo) / (points - 1) as f64;
    let log_var: Vec<f64> = variances.iter().map(|v| v.ln()).collect();

    // prior weights, normalised over the truncated range
    let mut weights = Vec::with_capacity(points);
    let mut cond = vec![0.0; points * m];
    for k in 0..points {
        let z = lo + h * k as f64;
        let simpson = if k == 0 || k == points - 1 {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        weights.push(simpson * log_normal_pdf(z, prior_mean, prior_var).exp());
        sprite_log_probs(z, means, variances, &log_var, &mut cond[k * m..(k + 1) * m]);
    }
    let total: f64 = weights.iter().sum();
    let mut marginal = vec![0.0; m];
    for k in 0..points {
        let w = weights[k] / total;
        weights[k] = w;
        for y in 0..m {
            marginal[y] += w * cond[k * m + y].exp();
        }
    }
    let log_marginal: Vec<f64> = marginal.iter().map(|p| p.ln()).collect();
    let mut mi = 0.0;
    for k in 0..points {
        for y in 0..m {
            let l = cond[k * m + y];
            if l == f64::NEG_INFINITY {
                continue; // 0 log 0
            }
            mi += weights[k] * l.exp() * (l - log_marginal[y]);
        }
    }
    let mi = mi / std::f64::consts::LN_2;
    if !mi.is_finite() {
        return Err(Error::NonFiniteIntegrand);
    }
    Ok(mi.max(0.0))
}

/// `I(Z; Y)` in bits for one SPRITE question under the trait prior
/// `N(prior_mean, prior_var)`, integrated over `prior_mean +/- 8 sd` with
/// `resolution` Simpson nodes. The error estimate compares against a run
/// at roughly half the resolution.
pub fn mutual_information(
    means: &[f64],
    variances: &[f64],
    prior_mean: f64,
    prior_var: f64,
    resolution: usize,
) -> Result<QuestionInformation> {
    check_sprites(means, variances)?;
    if resolution < 101 || resolution % 2 == 0 {
        return Err(Error::InvalidConfig(format!("resolution must be odd and at least 101, got {resolution}")));
    }
    if !prior_mean.is_finite() || !(prior_var.is_finite() && prior_var > 0.0) {
        return Err(Error::InvalidParameter("prior needs a finite mean and positive variance".into()));
    }
    let fine = simpson_mi(means, variances, prior_mean, prior_var, resolution)?;
    let mut coarse_points = resolution / 2 + 1;
    if coarse_points % 2 == 0 {
        coarse_points += 1;
    }
    let coarse = simpson_mi(means, variances, prior_mean, prior_var, coarse_points)?;
    Ok(QuestionInformation {
        question: 0,
        mi_bits: fine,
        quadrature_points: resolution,
        estimated_error: (fine - coarse).abs() + 1e-14,
    })
}

/// MI for every question of `params`.
pub fn question_information(
    params: &SpriteParams,
    prior_mean: f64,
    prior_var: f64,
    resolution: usize,
) -> Result<Vec<QuestionInformation>> {
    (0..params.n_questions())
        .map(|j| {
            let mut info = mutual_information(&params.means[j], &params.variances[j], prior_mean, prior_var, resolution)?;
            info.question = j;
            Ok(info)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcrfRow {
    pub z: f64,
    /// 1-based category.
    pub category: usize,
    /// Gaussian density `N(z | mean, variance)` of the category's sprite.
    pub density: f64,
    /// Normalised choice probability.
    pub probability: f64,
}

/// Sprite densities and choice probabilities over an increasing grid, one
/// row per grid point and category.
pub fn tabulate_icrf(means: &[f64], variances: &[f64], z_grid: &[f64]) -> Result<Vec<IcrfRow>> {
    check_sprites(means, variances)?;
    if z_grid.is_empty() {
        return Err(Error::InvalidParameter("z grid is empty".into()));
    }
    if z_grid.iter().any(|z| !z.is_finite()) || z_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("z grid must be finite and strictly increasing".into()));
    }
    let m = means.len();
    let log_var: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let mut buf = vec![0.0; m];
    let mut rows = Vec::with_capacity(z_grid.len() * m);
    for &z in z_grid {
        sprite_log_probs(z, means, variances, &log_var, &mut buf);
        for y in 0..m {
            rows.push(IcrfRow {
                z,
                category: y + 1,
                density: log_normal_pdf(z, means[y], variances[y]).exp(),
                probability: buf[y].exp(),
            });
        }
    }
    Ok(rows)
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points == 0 || !lo.is_finite() || !hi.is_finite() || (points > 1 && lo >= hi) {
        return Err(Error::InvalidParameter(format!("cannot build a grid of {points} points on [{lo}, {hi}]")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let h = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|k| if k == points - 1 { hi } else { lo + h * k as f64 }).collect())
}
