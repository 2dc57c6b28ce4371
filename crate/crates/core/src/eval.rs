//! Recovery error metrics and the puncture-and-predict benchmark.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FitConfig, Hyperparams};
use crate::data::ResponseMatrix;
use crate::error::{Error, Result};
use crate::likelihood::CellAssignment;
use crate::params::{ModelKind, SpriteParams};
use crate::rng::{derive_seed, substream};
use crate::sampler::run_chain;

/// Relative squared errors `||est - truth||^2 / ||truth||^2` for traits,
/// sprite means and sprite variances. Anchor entries are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryErrors {
    pub e_z: f64,
    pub e_mu: f64,
    pub e_nu: f64,
}

fn relative_sq_error(est: &[f64], truth: &[f64], what: &'static str) -> Result<f64> {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return Err(Error::ZeroTruthNorm(what));
    }
    Ok(num / den)
}

fn non_anchor(values: &[Vec<f64>], anchors: &[usize]) -> Vec<f64> {
    values
        .iter()
        .zip(anchors)
        .flat_map(|(row, &a)| row.iter().enumerate().filter(move |(k, _)| *k != a).map(|(_, v)| *v))
        .collect()
}

pub fn recovery_errors(estimate: &SpriteParams, truth: &SpriteParams) -> Result<RecoveryErrors> {
    if estimate.n_respondents() != truth.n_respondents()
        || estimate.n_questions() != truth.n_questions()
        || estimate.anchors != truth.anchors
        || estimate.means.iter().zip(&truth.means).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::DimensionMismatch(
            "estimate and truth differ in shape or anchors".into(),
        ));
    }
    Ok(RecoveryErrors {
        e_z: relative_sq_error(&estimate.latent_traits, &truth.latent_traits, "latent trait")?,
        e_mu: relative_sq_error(
            &non_anchor(&estimate.means, &estimate.anchors),
            &non_anchor(&truth.means, &truth.anchors),
            "sprite mean",
        )?,
        e_nu: relative_sq_error(
            &non_anchor(&estimate.variances, &estimate.anchors),
            &non_anchor(&truth.variances, &truth.anchors),
            "sprite variance",
        )?,
    })
}

/// [`recovery_errors`] after resolving the reflection symmetry of the model:
/// negating every trait and every mean leaves all choice probabilities
/// unchanged, so the estimate is reflected when its traits correlate
/// negatively with the truth.
pub fn aligned_recovery_errors(estimate: &SpriteParams, truth: &SpriteParams) -> Result<RecoveryErrors> {
    let dot: f64 = estimate
        .latent_traits
        .iter()
        .zip(&truth.latent_traits)
        .map(|(a, b)| a * b)
        .sum();
    if dot < 0.0 {
        recovery_errors(&estimate.reflected(), truth)
    } else {
        recovery_errors(estimate, truth)
    }
}

const PUNCTURE_ATTEMPTS: usize = 100;

/// Move `floor(rate * n_observed)` uniformly chosen observed cells into a
/// holdout set. Draws that would leave a respondent or question without
/// observations are retried up to a fixed bound.
pub fn puncture(data: &ResponseMatrix, rate: f64, seed: u64) -> Result<(ResponseMatrix, Vec<CellAssignment>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("puncture rate must lie in [0, 1), got {rate}")));
    }
    let observed: Vec<(usize, usize, usize)> = data.observed_cells().collect();
    let k = (rate * observed.len() as f64).floor() as usize;
    let (n, q) = (data.n_respondents(), data.n_questions());
    let mut row_count = vec![0usize; n];
    let mut col_count = vec![0usize; q];
    for &(i, j, _) in &observed {
        row_count[i] += 1;
        col_count[j] += 1;
    }
    let mut rng = substream(seed, "eval/puncture");
    let mut last_err = None;
    for _ in 0..PUNCTURE_ATTEMPTS {
        let mut picked: Vec<usize> = index::sample(&mut rng, observed.len(), k).into_vec();
        picked.sort_unstable();
        let mut rows = row_count.clone();
        let mut cols = col_count.clone();
        for &c in &picked {
            let (i, j, _) = observed[c];
            rows[i] -= 1;
            cols[j] -= 1;
        }
        if let Some(i) = rows.iter().position(|&r| r == 0) {
            last_err = Some(Error::PunctureMakesRowEmpty(i + 1));
            continue;
        }
        if let Some(j) = cols.iter().position(|&c| c == 0) {
            last_err = Some(Error::PunctureMakesColumnEmpty(j + 1));
            continue;
        }
        let cells: Vec<(usize, usize)> = picked.iter().map(|&c| (observed[c].0, observed[c].1)).collect();
        let holdout = picked
            .iter()
            .map(|&c| {
                let (i, j, y) = observed[c];
                CellAssignment { respondent: i, question: j, category: y }
            })
            .collect();
        return Ok((data.with_cells_removed(&cells), holdout));
    }
    Err(last_err.expect("at least one attempt"))
}

/// Fraction of holdout cells whose imputed mode differs from the true category.
pub fn prediction_error(holdout: &[CellAssignment], imputed_modes: &[CellAssignment]) -> Result<f64> {
    let modes: HashMap<(usize, usize), usize> = imputed_modes
        .iter()
        .map(|c| ((c.respondent, c.question), c.category))
        .collect();
    if holdout.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for cell in holdout {
        let pred = modes.get(&(cell.respondent, cell.question)).ok_or(Error::MissingPrediction {
            respondent: cell.respondent + 1,
            question: cell.question + 1,
        })?;
        if *pred != cell.category {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / holdout.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub model: ModelKind,
    pub mean_error: f64,
    /// Sample standard deviation over repetitions; 0 for a single repetition.
    pub std: f64,
    pub repetitions: usize,
    /// Error of each repetition, in repetition order.
    pub per_repetition: Vec<f64>,
}

/// Seed of the puncture pattern used in repetition `rep`.
pub fn repetition_seed(base_seed: u64, rep: usize) -> u64 {
    derive_seed(base_seed, &format!("eval/repetition/{rep}"))
}

/// Puncture `data` `repetitions` times; within a repetition every model is
/// fitted on the same training split and scored on the same holdout.
pub fn run_benchmark(
    data: &ResponseMatrix,
    models: &[ModelKind],
    rate: f64,
    repetitions: usize,
    base_seed: u64,
    hyper: &Hyperparams,
    config: &FitConfig,
) -> Result<Vec<BenchmarkResult>> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
    }
    if models.is_empty() {
        return Err(Error::InvalidConfig("at least one model is required".into()));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("puncture rate must lie in [0, 1), got {rate}")));
    }
    hyper.validate()?;
    config.validate()?;

    let wrap = |rep: usize| move |e: Error| Error::Repetition { repetition: rep + 1, source: Box::new(e) };
    let splits = (0..repetitions)
        .map(|rep| puncture(data, rate, repetition_seed(base_seed, rep)).map_err(wrap(rep)))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..repetitions).flat_map(|r| (0..models.len()).map(move |m| (r, m))).collect();
    let errors = jobs
        .par_iter()
        .map(|&(rep, m)| {
            let (train, holdout) = &splits[rep];
            let cfg = FitConfig { rng_seed: repetition_seed(base_seed, rep), ..*config };
            let out = run_chain(models[m], train, hyper, &cfg).map_err(wrap(rep))?;
            prediction_error(holdout, &out.summary.imputed_modes).map_err(wrap(rep))
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(models
        .iter()
        .enumerate()
        .map(|(m, &model)| {
            let per: Vec<f64> = (0..repetitions).map(|r| errors[r * models.len() + m]).collect();
            let mean = per.iter().sum::<f64>() / repetitions as f64;
            let std = if repetitions > 1 {
                (per.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (repetitions - 1) as f64).sqrt()
            } else {
                0.0
            };
            BenchmarkResult { model, mean_error: mean, std, repetitions, per_repetition: per }
        })
        .collect())
}

/// `model,mean_error,std,repetitions`
pub fn write_benchmark_csv<W: Write>(results: &[BenchmarkResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "mean_error", "std", "repetitions"])?;
    for r in results {
        w.write_record([
            r.model.tag().to_string(),
            format!("{:.6}", r.mean_error),
            format!("{:.6}", r.std),
            r.repetitions.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table with one `error (std)` cell per model.
pub fn format_benchmark_table(results: &[BenchmarkResult]) -> String {
    let width = results.iter().map(|r| r.model.tag().len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  prediction error (std)\n", "model");
    for r in results {
        out.push_str(&format!("{:<width$}  {:.2} ({:.2})\n", r.model.tag().to_uppercase(), r.mean_error, r.std));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sprite(z: Vec<f64>, mu: Vec<Vec<f64>>, nu: Vec<Vec<f64>>) -> SpriteParams {
        let q = mu.len();
        SpriteParams::new(z, mu, nu, vec![0; q]).unwrap()
    }

    fn base() -> SpriteParams {
        sprite(
            vec![3.0, 4.0],
            vec![vec![0.0, 1.0, -2.0], vec![0.0, 0.5, 0.7]],
            vec![vec![1.0, 2.0, 0.5], vec![1.0, 0.3, 1.5]],
        )
    }

    #[test]
    fn exact_estimate_is_zero() {
        let t = base();
        assert_eq!(recovery_errors(&t, &t).unwrap(), RecoveryErrors { e_z: 0.0, e_mu: 0.0, e_nu: 0.0 });
    }

    #[test]
    fn doubled_traits_give_one() {
        let t = base();
        let mut e = t.clone();
        e.latent_traits = vec![6.0, 8.0];
        assert_eq!(recovery_errors(&e, &t).unwrap().e_z, 1.0);
    }

    #[test]
    fn worked_trait_error() {
        let t = base();
        let mut e = t.clone();
        e.latent_traits = vec![3.0, 0.0];
        assert!((recovery_errors(&e, &t).unwrap().e_z - 0.64).abs() < 1e-15);
    }

    #[test]
    fn zero_truth_norm() {
        let mut t = base();
        t.latent_traits = vec![0.0, 0.0];
        assert_eq!(recovery_errors(&base(), &t).unwrap_err(), Error::ZeroTruthNorm("latent trait"));
    }

    #[test]
    fn shape_mismatch() {
        let t = base();
        let e = sprite(vec![1.0], vec![vec![0.0, 1.0, 1.0]; 2], vec![vec![1.0; 3]; 2]);
        assert!(matches!(recovery_errors(&e, &t), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn alignment_undoes_reflection() {
        let t = base();
        let r = t.reflected();
        assert!(recovery_errors(&r, &t).unwrap().e_z > 1.0);
        assert_eq!(aligned_recovery_errors(&r, &t).unwrap().e_z, 0.0);
        assert_eq!(aligned_recovery_errors(&r, &t).unwrap().e_mu, 0.0);
    }

    fn full(n: usize, q: usize) -> ResponseMatrix {
        let table: Vec<Vec<Option<i64>>> =
            (0..n).map(|i| (0..q).map(|j| Some(((i + j) % 3 + 1) as i64)).collect()).collect();
        ResponseMatrix::from_table(&table, &vec![3; q]).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let d = full(5, 4);
        let (train, holdout) = puncture(&d, 0.0, 1).unwrap();
        assert!(holdout.is_empty());
        assert_eq!(train, d);
    }

    #[test]
    fn holdout_size_is_floor() {
        let d = full(10, 10);
        let (train, holdout) = puncture(&d, 0.2, 3).unwrap();
        assert_eq!(holdout.len(), 20);
        assert_eq!(train.n_observed(), 80);
    }

    #[test]
    fn rate_bounds() {
        let d = full(3, 3);
        assert!(matches!(puncture(&d, 1.0, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(puncture(&d, -0.1, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn impossible_puncture_fails() {
        // one column: every respondent has exactly one observation
        let d = full(4, 1);
        let err = puncture(&d, 0.5, 0).unwrap_err();
        assert!(matches!(err, Error::PunctureMakesRowEmpty(_)));
    }

    #[test]
    fn split_is_a_partition() {
        let d = full(8, 6);
        for seed in 0..100 {
            let (train, holdout) = puncture(&d, 0.3, seed).unwrap();
            let mut cells: Vec<(usize, usize, usize)> = train.observed_cells().collect();
            for h in &holdout {
                assert!(!train.is_observed(h.respondent, h.question));
                cells.push((h.respondent, h.question, h.category));
            }
            cells.sort_unstable();
            let original: Vec<_> = d.observed_cells().collect();
            assert_eq!(cells, original);
        }
    }

    fn cell(i: usize, j: usize, y: usize) -> CellAssignment {
        CellAssignment { respondent: i, question: j, category: y }
    }

    #[test]
    fn prediction_error_counts() {
        let truth = vec![cell(0, 0, 1), cell(0, 1, 2), cell(1, 0, 3), cell(1, 1, 1)];
        assert_eq!(prediction_error(&truth, &truth).unwrap(), 0.0);
        let mut pred = truth.clone();
        pred[2].category = 1;
        assert_eq!(prediction_error(&truth, &pred).unwrap(), 0.25);
        let err = prediction_error(&truth, &pred[..3]).unwrap_err();
        assert_eq!(err, Error::MissingPrediction { respondent: 2, question: 2 });
    }

    proptest! {
        #[test]
        fn prediction_error_ignores_order(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let truth: Vec<CellAssignment> = (0..12).map(|k| cell(k / 4, k % 4, k % 3 + 1)).collect();
            let pred: Vec<CellAssignment> = truth.iter().map(|c| cell(c.respondent, c.question, (c.category + c.respondent) % 3 + 1)).collect();
            let mut shuffled = truth.clone();
            shuffled.shuffle(&mut substream(seed, "shuffle"));
            prop_assert_eq!(prediction_error(&truth, &pred).unwrap(), prediction_error(&shuffled, &pred).unwrap());
        }

        #[test]
        fn recovery_is_symmetric_under_respondent_permutation(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let t = base();
            let mut e = t.clone();
            e.latent_traits = vec![2.5, 4.4];
            let mut order = vec![0, 1];
            order.shuffle(&mut substream(seed, "perm"));
            let permute = |p: &SpriteParams| {
                let mut out = p.clone();
                out.latent_traits = order.iter().map(|&i| p.latent_traits[i]).collect();
                out
            };
            prop_assert_eq!(recovery_errors(&e, &t).unwrap(), recovery_errors(&permute(&e), &permute(&t)).unwrap());
        }
    }

    #[test]
    fn table_and_csv_layout() {
        let results = vec![
            BenchmarkResult { model: ModelKind::Sprite, mean_error: 0.25, std: 0.01, repetitions: 2, per_repetition: vec![0.24, 0.26] },
            BenchmarkResult { model: ModelKind::Gpcm, mean_error: 0.3, std: 0.0, repetitions: 2, per_repetition: vec![0.3, 0.3] },
        ];
        let mut buf = Vec::new();
        write_benchmark_csv(&results, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "model,mean_error,std,repetitions");
        assert_eq!(text.lines().count(), 3);
        let table = format_benchmark_table(&results);
        assert!(table.contains("SPRITE  0.25 (0.01)"));
    }
}
