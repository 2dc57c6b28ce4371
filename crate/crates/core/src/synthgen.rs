//! Synthetic SPRITE instances drawn from the prior, for recovery experiments.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Hyperparams;
use crate::data::ResponseMatrix;
use crate::error::{Error, Result};
use crate::likelihood::sprite_log_probs;
use crate::params::SpriteParams;
use crate::rng::substream;
use crate::sampler::sample_inverse_gamma;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub truth: SpriteParams,
    pub data: ResponseMatrix,
    pub hyper: Hyperparams,
    pub seed: u64,
}

/// Draw parameters from the prior and a fully observed `n x q` response
/// matrix with `m` categories per question. Category 1 of every question is
/// the anchor, pinned to mean 0 and variance 1.
pub fn generate(n: usize, q: usize, m: usize, hyper: &Hyperparams, seed: u64) -> Result<SyntheticInstance> {
    if n == 0 || q == 0 {
        return Err(Error::InvalidDimensions(format!("need n, q >= 1 (got n={n}, q={q})")));
    }
    if m < 2 {
        return Err(Error::InvalidDimensions(format!("need m >= 2 (got {m})")));
    }
    hyper.validate()?;

    let mut rng = substream(seed, "synthgen/truth");
    let trait_dist = Normal::new(hyper.prior_trait_mean, hyper.prior_trait_var.sqrt())
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mean_dist = Normal::new(0.0, hyper.prior_mean_var.sqrt()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let traits: Vec<f64> = (0..n).map(|_| trait_dist.sample(&mut rng)).collect();
    let mut means = Vec::with_capacity(q);
    let mut variances = Vec::with_capacity(q);
    for _ in 0..q {
        let mut mu = vec![0.0; m];
        let mut nu = vec![1.0; m];
        for k in 1..m {
            mu[k] = mean_dist.sample(&mut rng);
            nu[k] = sample_inverse_gamma(hyper.prior_var_shape, hyper.prior_var_scale, &mut rng);
        }
        means.push(mu);
        variances.push(nu);
    }
    let truth = SpriteParams::new(traits, means, variances, vec![0; q])?;

    let mut rng = substream(seed, "synthgen/data");
    let log_vars: Vec<Vec<f64>> = truth.variances.iter().map(|v| v.iter().map(|x| x.ln()).collect()).collect();
    let mut buf = vec![0.0; m];
    let table: Vec<Vec<Option<i64>>> = (0..n)
        .map(|i| {
            (0..q)
                .map(|j| {
                    sprite_log_probs(truth.latent_traits[i], &truth.means[j], &truth.variances[j], &log_vars[j], &mut buf);
                    Some(draw_category(&buf, rng.random::<f64>()) as i64 + 1)
                })
                .collect()
        })
        .collect();
    let data = ResponseMatrix::from_table(&table, &vec![m; q])?;
    Ok(SyntheticInstance { truth, data, hyper: *hyper, seed })
}

fn draw_category(log_probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, l) in log_probs.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return k;
        }
    }
    log_probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::sprite_category_probs;

    #[test]
    fn shapes_and_anchors() {
        let inst = generate(7, 4, 5, &Hyperparams::default(), 1).unwrap();
        assert_eq!(inst.data.n_respondents(), 7);
        assert_eq!(inst.data.n_questions(), 4);
        assert_eq!(inst.data.n_observed(), 28);
        assert_eq!(inst.data.categories(), &[5, 5, 5, 5]);
        for j in 0..4 {
            assert_eq!(inst.truth.means[j][0], 0.0);
            assert_eq!(inst.truth.variances[j][0], 1.0);
            assert!(inst.truth.variances[j].iter().all(|v| v.is_finite() && *v > 0.0));
        }
    }

    #[test]
    fn single_cell() {
        let inst = generate(1, 1, 3, &Hyperparams::default(), 5).unwrap();
        let y = inst.data.get(0, 0).unwrap();
        assert!((1..=3).contains(&y));
    }

    #[test]
    fn same_seed_same_instance() {
        let h = Hyperparams::default();
        assert_eq!(generate(10, 6, 4, &h, 42).unwrap(), generate(10, 6, 4, &h, 42).unwrap());
        assert_ne!(generate(10, 6, 4, &h, 42).unwrap().truth, generate(10, 6, 4, &h, 43).unwrap().truth);
    }

    #[test]
    fn bad_dimensions() {
        let h = Hyperparams::default();
        assert!(matches!(generate(0, 3, 3, &h, 0), Err(Error::InvalidDimensions(_))));
        assert!(matches!(generate(3, 0, 3, &h, 0), Err(Error::InvalidDimensions(_))));
        assert!(matches!(generate(3, 3, 1, &h, 0), Err(Error::InvalidDimensions(_))));
    }

    #[test]
    fn heavy_tailed_variances_stay_finite() {
        let inst = generate(1, 2000, 5, &Hyperparams::default(), 9).unwrap();
        for v in inst.truth.variances.iter().flatten() {
            assert!(v.is_finite() && *v > 0.0);
        }
    }

    #[test]
    fn category_frequencies_match_probabilities() {
        let means = [0.0, 1.0, -0.5];
        let vars = [1.0, 0.5, 2.0];
        let z = 0.3;
        let probs = sprite_category_probs(z, &means, &vars).unwrap().probs;
        let log_var: Vec<f64> = vars.iter().map(|v: &f64| v.ln()).collect();
        let mut buf = [0.0; 3];
        sprite_log_probs(z, &means, &vars, &log_var, &mut buf);
        let mut rng = substream(77, "freq");
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[draw_category(&buf, rng.random::<f64>())] += 1;
        }
        for k in 0..3 {
            let p = probs[k];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - p).abs() < 3.0 * se, "category {k}: {freq} vs {p}");
        }
    }
}
