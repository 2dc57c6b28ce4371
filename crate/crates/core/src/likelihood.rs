//! Category-choice kernels for SPRITE, ORD/LORD, NRM and GPCM.
//!
//! Every kernel works in log space: a `*_log_probs` function fills a slice
//! with normalised log-probabilities, and the public `*_category_probs`
//! wrappers validate inputs and exponentiate.

use serde::{Deserialize, Serialize};

use crate::data::ResponseMatrix;
use crate::error::{Error, Result};
use crate::math::{log_normal_interval, log_normalize};
use crate::params::{check_bins, check_permutation, ModelParams};

/// Probabilities over the categories of one question, category 1 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistribution {
    pub probs: Vec<f64>,
}

impl CategoryDistribution {
    fn from_log(log_probs: &[f64]) -> Self {
        CategoryDistribution {
            probs: log_probs.iter().map(|l| l.exp()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// SPRITE log-probabilities. `log_var` holds `ln(variances)`.
///
/// The shared `-ln(2 pi)/2` term is dropped since it cancels.
#[inline]
pub fn sprite_log_probs(z: f64, means: &[f64], variances: &[f64], log_var: &[f64], out: &mut [f64]) {
    for k in 0..means.len() {
        let d = z - means[k];
        out[k] = -0.5 * (log_var[k] + d * d / variances[k]);
    }
    log_normalize(out);
}

/// Choice probabilities under SPRITE: each category's Gaussian density at `z`,
/// normalised over categories.
pub fn sprite_category_probs(z: f64, means: &[f64], variances: &[f64]) -> Result<CategoryDistribution> {
    if means.len() != variances.len() {
        return Err(Error::DimensionMismatch("means and variances differ in length".into()));
    }
    if means.len() < 2 {
        return Err(Error::InvalidParameter("at least two categories required".into()));
    }
    if !z.is_finite() || !all_finite(means) || !all_finite(variances) {
        return Err(Error::NonFiniteInput("sprite kernel argument"));
    }
    if variances.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidParameter("sprite variances must be positive".into()));
    }
    let log_var: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let mut out = vec![0.0; means.len()];
    sprite_log_probs(z, means, variances, &log_var, &mut out);
    Ok(CategoryDistribution::from_log(&out))
}

/// ORD/LORD log-probabilities: label `y` takes the mass of slot `perm[y]`,
/// slot `s` spanning `(edge[s-1] - z, edge[s] - z]` with the outer edges at
/// minus and plus infinity.
#[inline]
pub fn ord_log_probs(z: f64, bins: &[f64], perm: &[usize], out: &mut [f64]) {
    let m = bins.len() + 1;
    for (label, &slot) in perm.iter().enumerate().take(m) {
        let lower = if slot == 0 { f64::NEG_INFINITY } else { bins[slot - 1] - z };
        let upper = if slot == m - 1 { f64::INFINITY } else { bins[slot] - z };
        out[label] = log_normal_interval(lower, upper);
    }
}

/// Choice probabilities under the ordinal-probit model with a label
/// permutation (identity for plain ORD).
pub fn ord_category_probs(z: f64, interior_bins: &[f64], permutation: &[usize]) -> Result<CategoryDistribution> {
    if !z.is_finite() || !all_finite(interior_bins) {
        return Err(Error::NonFiniteInput("ORD kernel argument"));
    }
    if interior_bins.is_empty() || interior_bins.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnorderedBins);
    }
    if permutation.len() != interior_bins.len() + 1 {
        return Err(Error::NotABijection(interior_bins.len() + 1));
    }
    check_permutation(permutation)?;
    let mut out = vec![0.0; permutation.len()];
    ord_log_probs(z, interior_bins, permutation, &mut out);
    Ok(CategoryDistribution::from_log(&out))
}

#[inline]
pub fn nrm_log_probs(theta: f64, betas: &[f64], alphas: &[f64], out: &mut [f64]) {
    for k in 0..betas.len() {
        out[k] = betas[k] * (theta - alphas[k]);
    }
    log_normalize(out);
}

/// Choice probabilities under the nominal response model.
pub fn nrm_category_probs(theta: f64, betas: &[f64], alphas: &[f64]) -> Result<CategoryDistribution> {
    if betas.len() != alphas.len() || betas.len() < 2 {
        return Err(Error::DimensionMismatch(
            "NRM needs equal-length betas and alphas with at least two categories".into(),
        ));
    }
    if !theta.is_finite() || !all_finite(betas) || !all_finite(alphas) {
        return Err(Error::NonFiniteInput("NRM kernel argument"));
    }
    let mut out = vec![0.0; betas.len()];
    nrm_log_probs(theta, betas, alphas, &mut out);
    Ok(CategoryDistribution::from_log(&out))
}

#[inline]
pub fn gpcm_log_probs(theta: f64, beta: f64, alphas: &[f64], out: &mut [f64]) {
    let mut acc = 0.0;
    for (k, &a) in alphas.iter().enumerate() {
        acc += beta * (theta - a);
        out[k] = acc;
    }
    log_normalize(out);
}

/// Choice probabilities under the generalized partial credit model. The
/// category-`y` logit is the cumulative sum of `beta (theta - alpha_v)` for
/// `v = 1..=y`.
pub fn gpcm_category_probs(theta: f64, beta: f64, alphas: &[f64]) -> Result<CategoryDistribution> {
    if alphas.len() < 2 {
        return Err(Error::DimensionMismatch("GPCM needs at least two categories".into()));
    }
    if !theta.is_finite() || !beta.is_finite() || !all_finite(alphas) {
        return Err(Error::NonFiniteInput("GPCM kernel argument"));
    }
    let mut out = vec![0.0; alphas.len()];
    gpcm_log_probs(theta, beta, alphas, &mut out);
    Ok(CategoryDistribution::from_log(&out))
}

/// Fill `out` (length `M_j`) with log-probabilities for respondent `i`,
/// question `j` under `params`.
pub(crate) fn cell_log_probs(params: &ModelParams, i: usize, j: usize, out: &mut [f64]) {
    match params {
        ModelParams::Sprite(p) => {
            let nu = &p.variances[j];
            let log_var: Vec<f64> = nu.iter().map(|v| v.ln()).collect();
            sprite_log_probs(p.latent_traits[i], &p.means[j], nu, &log_var, out);
        }
        ModelParams::Ord(p) | ModelParams::Lord(p) => {
            let z = p.latent_traits[i] - p.difficulties[j];
            ord_log_probs(z, &p.bins[j], &p.permutations[j], out);
        }
        ModelParams::Nrm(p) => {
            nrm_log_probs(p.latent_traits[i], &p.discriminations[j], &p.difficulties[j], out);
        }
        ModelParams::Gpcm(p) => {
            gpcm_log_probs(p.latent_traits[i], p.discrimination[j], &p.thresholds[j], out);
        }
    }
}

/// Check that `params` is shaped for `data` and internally valid.
pub(crate) fn check_dimensions(params: &ModelParams, data: &ResponseMatrix) -> Result<()> {
    let n = params.latent_traits().len();
    if n != data.n_respondents() {
        return Err(Error::DimensionMismatch(format!(
            "{} latent traits for {} respondents",
            n,
            data.n_respondents()
        )));
    }
    let cats = params.categories();
    if cats.as_slice() != data.categories() {
        return Err(Error::DimensionMismatch(format!(
            "parameter category counts {:?} do not match data {:?}",
            cats,
            data.categories()
        )));
    }
    match params {
        ModelParams::Ord(p) | ModelParams::Lord(p) => {
            if p.difficulties.len() != cats.len() || p.permutations.len() != cats.len() {
                return Err(Error::DimensionMismatch("ORD difficulties per question".into()));
            }
            for (b, perm) in p.bins.iter().zip(&p.permutations) {
                check_bins(b)?;
                if perm.len() != b.len() + 1 {
                    return Err(Error::NotABijection(b.len() + 1));
                }
                check_permutation(perm)?;
            }
        }
        ModelParams::Nrm(p) => {
            if p.difficulties.iter().map(Vec::len).ne(cats.iter().copied()) {
                return Err(Error::DimensionMismatch("NRM difficulties per question".into()));
            }
        }
        ModelParams::Gpcm(p) => {
            if p.discrimination.len() != cats.len() {
                return Err(Error::DimensionMismatch("GPCM discriminations per question".into()));
            }
        }
        ModelParams::Sprite(p) => {
            if p.variances.iter().map(Vec::len).ne(cats.iter().copied()) {
                return Err(Error::DimensionMismatch("sprite variances per question".into()));
            }
        }
    }
    Ok(())
}

/// One imputed response for an unobserved cell; `category` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellAssignment {
    pub respondent: usize,
    pub question: usize,
    pub category: usize,
}

/// Sum of log choice probabilities over the observed cells, plus any imputed
/// cells supplied.
pub fn dataset_log_likelihood(
    params: &ModelParams,
    data: &ResponseMatrix,
    imputed: Option<&[CellAssignment]>,
) -> Result<f64> {
    check_dimensions(params, data)?;
    let mut buf = vec![0.0; data.max_categories()];
    let mut total = 0.0;
    for (i, j, y) in data.observed_cells() {
        let m = data.n_categories(j);
        cell_log_probs(params, i, j, &mut buf[..m]);
        total += buf[y - 1];
    }
    for cell in imputed.unwrap_or(&[]) {
        let (i, j) = (cell.respondent, cell.question);
        if i >= data.n_respondents() || j >= data.n_questions() {
            return Err(Error::DimensionMismatch(format!("imputed cell ({i}, {j}) out of range")));
        }
        if data.is_observed(i, j) {
            return Err(Error::DimensionMismatch(format!("imputed cell ({i}, {j}) is observed")));
        }
        let m = data.n_categories(j);
        if cell.category < 1 || cell.category > m {
            return Err(Error::CategoryOutOfRange {
                respondent: i + 1,
                question: j + 1,
                value: cell.category as i64,
                max: m,
            });
        }
        cell_log_probs(params, i, j, &mut buf[..m]);
        total += buf[cell.category - 1];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::normal_cdf;
    use crate::params::{GpcmParams, NrmParams, OrdParams, SpriteParams};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sprite_identical_sprites_split_evenly() {
        let d = sprite_category_probs(0.0, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(close(&d.probs, &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn sprite_two_sprites_worked_value() {
        // N(0|0,1) / (N(0|0,1) + N(0|1,1)) = 1 / (1 + e^{-1/2})
        let d = sprite_category_probs(0.0, &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(close(&d.probs, &[0.62246, 0.37754], 1e-5), "{:?}", d.probs);
    }

    #[test]
    fn sprite_reflection_reverses() {
        let a = sprite_category_probs(0.7, &[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        let b = sprite_category_probs(-0.7, &[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(a.probs[0], b.probs[1]);
        assert_eq!(a.probs[1], b.probs[0]);
    }

    #[test]
    fn sprite_rejects_non_finite() {
        assert_eq!(
            sprite_category_probs(f64::NAN, &[0.0, 1.0], &[1.0, 1.0]).unwrap_err(),
            Error::NonFiniteInput("sprite kernel argument")
        );
        assert!(sprite_category_probs(0.0, &[0.0, f64::INFINITY], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn sprite_far_tail_is_finite() {
        let d = sprite_category_probs(40.0, &[0.0, 1.0, -3.0], &[1.0, 0.01, 0.5]).unwrap();
        assert!(d.probs.iter().all(|p| p.is_finite()));
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ord_worked_value() {
        let d = ord_category_probs(0.5, &[0.0, 1.0], &[0, 1, 2]).unwrap();
        let expect = [
            normal_cdf(-0.5),
            normal_cdf(0.5) - normal_cdf(-0.5),
            1.0 - normal_cdf(0.5),
        ];
        assert!(close(&d.probs, &expect, 1e-14));
        assert!(close(&d.probs, &[0.30854, 0.38292, 0.30854], 1e-5));
    }

    #[test]
    fn ord_two_categories_symmetric() {
        let d = ord_category_probs(0.0, &[0.0], &[0, 1]).unwrap();
        assert!(close(&d.probs, &[0.5, 0.5], 1e-15));
        let s = ord_category_probs(0.0, &[0.0], &[1, 0]).unwrap();
        assert!(close(&s.probs, &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn ord_swap_reverses_output() {
        let id = ord_category_probs(1.0, &[0.0], &[0, 1]).unwrap();
        let sw = ord_category_probs(1.0, &[0.0], &[1, 0]).unwrap();
        assert_eq!(sw.probs, vec![id.probs[1], id.probs[0]]);
    }

    #[test]
    fn ord_errors() {
        assert_eq!(ord_category_probs(0.0, &[0.0, 0.0], &[0, 1, 2]).unwrap_err(), Error::UnorderedBins);
        assert_eq!(ord_category_probs(0.0, &[0.0, 1.0], &[0, 0, 2]).unwrap_err(), Error::NotABijection(3));
    }

    #[test]
    fn nrm_worked_values() {
        let d = nrm_category_probs(3.0, &[0.0, 0.0], &[1.0, -2.0]).unwrap();
        assert!(close(&d.probs, &[0.5, 0.5], 1e-15));
        let d = nrm_category_probs(1.0, &[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert!(close(&d.probs, &[0.88080, 0.11920], 1e-5));
    }

    #[test]
    fn nrm_translation_cancels() {
        let a = nrm_category_probs(0.4, &[1.2, -0.3, 0.8], &[0.1, 0.5, -1.0]).unwrap();
        let b = nrm_category_probs(2.4, &[1.2, -0.3, 0.8], &[2.1, 2.5, 1.0]).unwrap();
        assert!(close(&a.probs, &b.probs, 1e-12));
    }

    #[test]
    fn gpcm_worked_values() {
        let d = gpcm_category_probs(0.3, 0.0, &[1.0, 2.0, -1.0, 0.0]).unwrap();
        assert!(close(&d.probs, &[0.25; 4], 1e-15));
        let d = gpcm_category_probs(1.0, 1.0, &[0.0, 0.0]).unwrap();
        assert!(close(&d.probs, &[0.26894, 0.73106], 1e-5));
        let d = gpcm_category_probs(0.7, 2.0, &[0.7, 0.7, 0.7]).unwrap();
        assert!(close(&d.probs, &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn lord_identity_matches_ord_bitwise() {
        let bins = [0.0, 0.4, 1.3];
        for z in [-2.0, -0.1, 0.0, 0.9, 3.3] {
            let mut a = [0.0; 4];
            ord_log_probs(z, &bins, &[0, 1, 2, 3], &mut a);
            let b = ord_category_probs(z, &bins, &[0, 1, 2, 3]).unwrap();
            let a: Vec<f64> = a.iter().map(|l| l.exp()).collect();
            assert_eq!(a, b.probs);
        }
    }

    #[test]
    fn ord_extreme_categories_monotone() {
        let bins = [0.0, 0.5, 1.7, 2.0];
        let perm = [0, 1, 2, 3, 4];
        let mut prev: Option<CategoryDistribution> = None;
        for s in 0..=1200 {
            let z = -6.0 + s as f64 * 0.01;
            let d = ord_category_probs(z, &bins, &perm).unwrap();
            if let Some(p) = &prev {
                assert!(d.probs[0] <= p.probs[0]);
                assert!(d.probs[4] >= p.probs[4]);
            }
            prev = Some(d);
        }
    }

    #[test]
    fn gpcm_top_category_monotone_for_positive_beta() {
        let alphas = [0.3, -0.5, 1.2, 0.1];
        let mut prev = 0.0;
        for s in 0..=1200 {
            let theta = -6.0 + s as f64 * 0.01;
            let d = gpcm_category_probs(theta, 1.3, &alphas).unwrap();
            assert!(d.probs[3] >= prev);
            prev = d.probs[3];
        }
    }

    #[test]
    fn empty_dataset_sums_to_zero_and_single_cell_is_ln_p() {
        let data = ResponseMatrix::from_table(&[vec![Some(2)]], &[2]).unwrap();
        let params = ModelParams::Sprite(
            SpriteParams::new(vec![0.0], vec![vec![0.0, 1.0]], vec![vec![1.0, 1.0]], vec![0]).unwrap(),
        );
        let ll = dataset_log_likelihood(&params, &data, None).unwrap();
        let p = sprite_category_probs(0.0, &[0.0, 1.0], &[1.0, 1.0]).unwrap().probs[1];
        assert!((ll - p.ln()).abs() < 1e-14);
        // an empty imputation list adds nothing
        let ll2 = dataset_log_likelihood(&params, &data, Some(&[])).unwrap();
        assert_eq!(ll, ll2);
    }

    #[test]
    fn sprite_dataset_matches_cellwise_product() {
        let table = vec![
            vec![Some(1), Some(3)],
            vec![Some(2), None],
            vec![Some(3), Some(1)],
        ];
        let data = ResponseMatrix::from_table(&table, &[3, 3]).unwrap();
        let traits = vec![-0.4, 0.9, 1.7];
        let means = vec![vec![0.0, 0.8, -1.1], vec![0.0, 2.0, 0.3]];
        let vars = vec![vec![1.0, 0.6, 2.5], vec![1.0, 0.2, 1.4]];
        let params = ModelParams::Sprite(SpriteParams::new(traits.clone(), means.clone(), vars.clone(), vec![0, 0]).unwrap());
        let imputed = [CellAssignment { respondent: 1, question: 1, category: 2 }];
        let got = dataset_log_likelihood(&params, &data, Some(&imputed)).unwrap();

        // independent oracle: densities straight from the Gaussian formula
        let dens = |z: f64, m: f64, v: f64| (-(z - m) * (z - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let prob = |i: usize, j: usize, y: usize| {
            let num = dens(traits[i], means[j][y], vars[j][y]);
            let den: f64 = (0..3).map(|k| dens(traits[i], means[j][k], vars[j][k])).sum();
            num / den
        };
        let product = prob(0, 0, 0) * prob(0, 1, 2) * prob(1, 0, 1) * prob(2, 0, 2) * prob(2, 1, 0) * prob(1, 1, 1);
        assert!((got - product.ln()).abs() < 1e-10, "{got} vs {}", product.ln());
    }

    #[test]
    fn dataset_dimension_mismatch() {
        let data = ResponseMatrix::from_table(&[vec![Some(1)], vec![Some(2)]], &[2]).unwrap();
        let params = ModelParams::Gpcm(GpcmParams::new(vec![0.0], vec![1.0], vec![vec![0.0, 0.0]]).unwrap());
        assert!(matches!(
            dataset_log_likelihood(&params, &data, None),
            Err(Error::DimensionMismatch(_))
        ));
        let params = ModelParams::Nrm(NrmParams::new(vec![0.0, 0.0], vec![vec![0.0; 3]], vec![vec![0.0; 3]]).unwrap());
        assert!(matches!(
            dataset_log_likelihood(&params, &data, None),
            Err(Error::DimensionMismatch(_))
        ));
        let params = ModelParams::Ord(OrdParams::new(vec![0.0, 1.0], vec![0.0], vec![vec![0.0]], vec![vec![0, 1]]).unwrap());
        assert!(dataset_log_likelihood(&params, &data, None).unwrap().is_finite());
    }

    proptest! {
        #[test]
        fn sprite_translation_invariant(
            z in -5.0f64..5.0,
            delta in -10.0f64..10.0,
            means in proptest::collection::vec(-3.0f64..3.0, 4),
            vars in proptest::collection::vec(0.05f64..5.0, 4),
        ) {
            let a = sprite_category_probs(z, &means, &vars).unwrap();
            let shifted: Vec<f64> = means.iter().map(|m| m + delta).collect();
            let b = sprite_category_probs(z + delta, &shifted, &vars).unwrap();
            prop_assert!(close(&a.probs, &b.probs, 1e-12));
        }

        #[test]
        fn sprite_no_underflow_40_sd(
            k in 0usize..4,
            sd_units in -40.0f64..40.0,
            means in proptest::collection::vec(-3.0f64..3.0, 4),
            vars in proptest::collection::vec(0.01f64..4.0, 4),
        ) {
            let z = means[k] + sd_units * vars[k].sqrt();
            let d = sprite_category_probs(z, &means, &vars).unwrap();
            prop_assert!(d.probs.iter().all(|p| p.is_finite() && *p >= 0.0));
            prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
