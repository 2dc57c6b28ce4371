//! Metropolis-within-Gibbs inference for all models.
//!
//! One iteration runs, in order:
//! 1. a Gaussian random-walk proposal for every respondent trait,
//! 2. a proposal for every question block (SPRITE: non-anchor means by random
//!    walk, non-anchor variances from an inverse gamma centred on the current
//!    value),
//! 3. for LORD, a random transposition of each question's label permutation,
//! 4. Gibbs resampling of every unobserved response from its exact
//!    categorical distribution.
//!
//! Likelihood ratios in steps 1-3 hold the imputed responses at their
//! previous values. In `Blockwise` mode each trait and each question block is
//! its own MH step; in `Joint` mode steps 1 and 2 are one accept/reject.
//!
//! Proposals and uniforms are drawn sequentially from one stream and the
//! likelihood differences are evaluated in parallel, so the output depends on
//! the seed only, not on the thread count.

mod blocks;

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AcceptanceMode, FitConfig, Hyperparams, Initialization};
use crate::data::ResponseMatrix;
use crate::error::{Error, Result};
use crate::likelihood::{cell_log_probs, check_dimensions, dataset_log_likelihood, CellAssignment};
use crate::math::log_normal_pdf;
use crate::params::{GpcmParams, ModelKind, ModelParams, NrmParams, OrdParams, SpriteParams};
use crate::rng::{substream, StreamRng};

use blocks::{GpcmBlock, NrmBlock, OrdBlock, QuestionBlock, SpriteBlock};

pub(crate) use blocks::sample_inverse_gamma;

/// Largest category count for which LORD searches over permutations.
pub const MAX_PERMUTATION_CATEGORIES: usize = 8;

/// Full parameter state at one iteration, with the current imputations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: ModelParams,
    pub imputed_responses: Vec<CellAssignment>,
    /// Log-likelihood over observed and imputed cells.
    pub log_likelihood: f64,
    pub iteration: usize,
}

impl ChainState {
    /// Build a state, checking that `imputed` covers exactly the unobserved cells.
    pub fn new(params: ModelParams, data: &ResponseMatrix, imputed: Vec<CellAssignment>) -> Result<Self> {
        let missing: Vec<(usize, usize)> = data.missing_cells().collect();
        let given: Vec<(usize, usize)> = imputed.iter().map(|c| (c.respondent, c.question)).collect();
        let mut sorted = given.clone();
        sorted.sort_unstable();
        if sorted != missing {
            return Err(Error::DimensionMismatch(
                "imputed responses must cover exactly the unobserved cells".into(),
            ));
        }
        let log_likelihood = dataset_log_likelihood(&params, data, Some(&imputed))?;
        Ok(ChainState {
            params,
            imputed_responses: imputed,
            log_likelihood,
            iteration: 0,
        })
    }
}

/// Fraction of accepted proposals per block, over all iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub traits: f64,
    pub questions: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<f64>,
}

/// Posterior means of the question-level parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum QuestionSummary {
    Sprite {
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
        /// 0-based anchor category per question.
        anchors: Vec<usize>,
    },
    Ord {
        difficulties: Vec<f64>,
        bins: Vec<Vec<f64>>,
    },
    Nrm {
        discriminations: Vec<Vec<f64>>,
        difficulties: Vec<Vec<f64>>,
    },
    Gpcm {
        discrimination: Vec<f64>,
        thresholds: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub model: ModelKind,
    pub respondent_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub burn_in_iterations: usize,
    pub sample_iterations: usize,
    pub trait_means: Vec<f64>,
    pub question_params: QuestionSummary,
    /// Most frequent sampled category (1-based) per unobserved cell; ties go
    /// to the lowest category.
    pub imputed_modes: Vec<CellAssignment>,
    pub acceptance_rates: AcceptanceRates,
    /// LORD only: most visited `label -> slot` map per question, both 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation_mode: Option<Vec<Vec<usize>>>,
}

impl PosteriorSummary {
    /// Posterior-mean SPRITE parameters, if this is a SPRITE fit.
    pub fn sprite_estimate(&self) -> Option<SpriteParams> {
        match &self.question_params {
            QuestionSummary::Sprite { means, variances, anchors } => SpriteParams::new(
                self.trait_means.clone(),
                means.clone(),
                variances.clone(),
                anchors.clone(),
            )
            .ok(),
            _ => None,
        }
    }
}

/// One row of the per-iteration diagnostics trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Observed-data log-likelihood after the iteration.
    pub log_likelihood: f64,
    pub accept_rate_traits: f64,
    pub accept_rate_questions: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub summary: PosteriorSummary,
    pub trace: Vec<TraceRow>,
}

/// Write the trace as `iteration,log_likelihood,accept_rate_traits,accept_rate_questions`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Where a chain starts.
#[derive(Debug, Clone)]
pub enum ChainStart {
    /// Default or random initial values for the given model.
    Fresh(ModelKind),
    /// Explicit starting parameters; the model is taken from the variant.
    From(ModelParams),
}

// ---------------------------------------------------------------------------
// Elementary operations

/// Metropolis-Hastings decision for the given log-likelihoods, log-priors and
/// log Hastings correction.
pub fn mh_accept<R: Rng + ?Sized>(
    log_like_new: f64,
    log_like_old: f64,
    log_prior_new: f64,
    log_prior_old: f64,
    log_hastings: f64,
    rng: &mut R,
) -> bool {
    let log_ratio = (log_like_new - log_like_old) + (log_prior_new - log_prior_old) + log_hastings;
    accept_with_uniform(log_ratio, rng.random::<f64>())
}

#[inline]
fn accept_with_uniform(log_ratio: f64, u: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    u < log_ratio.min(0.0).exp()
}

/// Joint proposal for all SPRITE parameters of `state`: random walks on the
/// traits and non-anchor means, inverse-gamma draws for the non-anchor
/// variances. Returns the proposal and its log Hastings correction.
pub fn propose_sprite_block<R: Rng + ?Sized>(
    state: &ChainState,
    config: &FitConfig,
    rng: &mut R,
) -> Result<(SpriteParams, f64)> {
    let ModelParams::Sprite(p) = &state.params else {
        return Err(Error::InvalidParameter("propose_sprite_block needs SPRITE parameters".into()));
    };
    config.validate()?;
    let traits: Vec<f64> = p
        .latent_traits
        .iter()
        .map(|&z| z + config.proposal_trait_sd * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    let mut means = Vec::with_capacity(p.n_questions());
    let mut variances = Vec::with_capacity(p.n_questions());
    let mut hastings = 0.0;
    for j in 0..p.n_questions() {
        let block = SpriteBlock::new(p.means[j].clone(), p.variances[j].clone(), p.anchors[j]);
        let (next, h) = block.propose(config, rng);
        hastings += h;
        means.push(next.means);
        variances.push(next.variances);
    }
    Ok((SpriteParams::new(traits, means, variances, p.anchors.clone())?, hastings))
}

fn sample_categorical(log_probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &l) in log_probs.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return k;
        }
    }
    // rounding left u above the cumulative total; take the last non-zero category
    log_probs.iter().rposition(|l| *l > f64::NEG_INFINITY).unwrap_or(0)
}

/// Redraw every unobserved response from its categorical distribution under
/// `state.params`. Cells are visited in row-major order.
pub fn gibbs_impute<R: Rng + ?Sized>(
    state: &ChainState,
    data: &ResponseMatrix,
    rng: &mut R,
) -> Result<Vec<CellAssignment>> {
    check_dimensions(&state.params, data)?;
    let mut buf = vec![0.0; data.max_categories()];
    Ok(data
        .missing_cells()
        .map(|(i, j)| {
            let m = data.n_categories(j);
            cell_log_probs(&state.params, i, j, &mut buf[..m]);
            CellAssignment {
                respondent: i,
                question: j,
                category: sample_categorical(&buf[..m], rng.random::<f64>()) + 1,
            }
        })
        .collect())
}

/// `perm` with two uniformly chosen distinct labels exchanged. Fewer than two
/// labels leaves it unchanged.
pub fn propose_transposition<R: Rng + ?Sized>(perm: &[usize], rng: &mut R) -> Vec<usize> {
    let m = perm.len();
    let mut next = perm.to_vec();
    if m < 2 {
        return next;
    }
    let a = rng.random_range(0..m);
    let mut b = rng.random_range(0..m - 1);
    if b >= a {
        b += 1;
    }
    next.swap(a, b);
    next
}

/// One MH move on question `question`'s label permutation (LORD). The
/// transposition proposal is symmetric and the prior uniform, so only the
/// likelihood ratio enters.
pub fn sample_permutation<R: Rng + ?Sized>(
    state: &ChainState,
    data: &ResponseMatrix,
    question: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let p = match &state.params {
        ModelParams::Lord(p) | ModelParams::Ord(p) => p,
        _ => return Err(Error::InvalidParameter("sample_permutation needs ORD/LORD parameters".into())),
    };
    check_dimensions(&state.params, data)?;
    if question >= p.n_questions() {
        return Err(Error::DimensionMismatch(format!("question {question} out of range")));
    }
    let m = p.bins[question].len() + 1;
    if m > MAX_PERMUTATION_CATEGORIES {
        return Err(Error::TooManyCategoriesForPermutationSearch { question: question + 1, count: m });
    }
    let current = OrdBlock {
        difficulty: p.difficulties[question],
        bins: p.bins[question].clone(),
        perm: p.permutations[question].clone(),
    };
    let mut proposed = current.clone();
    proposed.perm = propose_transposition(&current.perm, rng);

    let imputed: BTreeMap<(usize, usize), usize> = state
        .imputed_responses
        .iter()
        .map(|c| ((c.respondent, c.question), c.category))
        .collect();
    let (mut old, mut new) = (0.0, 0.0);
    for i in 0..data.n_respondents() {
        let y = match data.get(i, question) {
            Some(y) => y,
            None => *imputed.get(&(i, question)).ok_or_else(|| {
                Error::DimensionMismatch(format!("no imputed value for cell ({i}, {question})"))
            })?,
        } - 1;
        old += current.log_prob(p.latent_traits[i], y);
        new += proposed.log_prob(p.latent_traits[i], y);
    }
    Ok(if mh_accept(new, old, 0.0, 0.0, 0.0, rng) {
        proposed.perm
    } else {
        current.perm
    })
}

// ---------------------------------------------------------------------------
// Chain driver

/// Run a chain from default (or configured random) initial values.
pub fn run_chain(
    kind: ModelKind,
    data: &ResponseMatrix,
    hyper: &Hyperparams,
    config: &FitConfig,
) -> Result<ChainOutput> {
    run_chain_observed(ChainStart::Fresh(kind), data, hyper, config, None)
}

/// Run a chain from explicit starting parameters.
pub fn run_chain_with_init(
    init: ModelParams,
    data: &ResponseMatrix,
    hyper: &Hyperparams,
    config: &FitConfig,
) -> Result<ChainOutput> {
    run_chain_observed(ChainStart::From(init), data, hyper, config, None)
}

/// Run a chain, handing the full state to `observer` after every iteration.
pub fn run_chain_observed(
    start: ChainStart,
    data: &ResponseMatrix,
    hyper: &Hyperparams,
    config: &FitConfig,
    observer: Option<&mut dyn FnMut(&ChainState)>,
) -> Result<ChainOutput> {
    hyper.validate()?;
    config.validate()?;
    let kind = match &start {
        ChainStart::Fresh(k) => *k,
        ChainStart::From(p) => {
            check_dimensions(p, data)?;
            p.kind()
        }
    };
    if kind == ModelKind::Lord {
        for (j, &m) in data.categories().iter().enumerate() {
            if m > MAX_PERMUTATION_CATEGORIES {
                return Err(Error::TooManyCategoriesForPermutationSearch { question: j + 1, count: m });
            }
        }
    }
    let mut init_rng = substream(config.rng_seed, "sampler/init");
    let random = config.initialization == Initialization::Random;
    let params = match start {
        ChainStart::From(p) => p,
        ChainStart::Fresh(k) => initial_params(k, data, random, &mut init_rng),
    };
    let responses = initial_responses(data, &mut init_rng);
    let rng = substream(config.rng_seed, "sampler/chain");

    let traits = params.latent_traits().to_vec();
    let (trait_mean, trait_var) = match kind {
        ModelKind::Ord | ModelKind::Lord => (0.0, hyper.ord_prior_trait_var),
        _ => (hyper.prior_trait_mean, hyper.prior_trait_var),
    };
    let ctx = Context {
        data,
        hyper,
        cfg: config,
        trait_mean,
        trait_var,
        kind,
    };
    match params {
        ModelParams::Sprite(p) => {
            let blocks = (0..p.n_questions())
                .map(|j| SpriteBlock::new(p.means[j].clone(), p.variances[j].clone(), p.anchors[j]))
                .collect();
            drive(ctx, traits, blocks, responses, rng, observer)
        }
        ModelParams::Ord(p) | ModelParams::Lord(p) => {
            let blocks = (0..p.n_questions())
                .map(|j| OrdBlock {
                    difficulty: p.difficulties[j],
                    bins: p.bins[j].clone(),
                    perm: p.permutations[j].clone(),
                })
                .collect();
            drive(ctx, traits, blocks, responses, rng, observer)
        }
        ModelParams::Nrm(p) => {
            let blocks = p
                .discriminations
                .iter()
                .zip(&p.difficulties)
                .map(|(b, a)| NrmBlock { betas: b.clone(), alphas: a.clone() })
                .collect();
            drive(ctx, traits, blocks, responses, rng, observer)
        }
        ModelParams::Gpcm(p) => {
            let blocks = p
                .discrimination
                .iter()
                .zip(&p.thresholds)
                .map(|(&b, a)| GpcmBlock { beta: b, alphas: a.clone() })
                .collect();
            drive(ctx, traits, blocks, responses, rng, observer)
        }
    }
}

fn initial_params(kind: ModelKind, data: &ResponseMatrix, random: bool, rng: &mut StreamRng) -> ModelParams {
    let n = data.n_respondents();
    let cats = data.categories();
    let normal = |rng: &mut StreamRng| -> f64 { StandardNormal.sample(rng) };
    let traits: Vec<f64> = (0..n).map(|_| if random { normal(rng) } else { 0.0 }).collect();
    match kind {
        ModelKind::Sprite => {
            let anchors = data.anchor_indices();
            let mut means = Vec::new();
            let mut vars = Vec::new();
            for &m in cats {
                if random {
                    means.push((0..m).map(|_| normal(rng)).collect());
                    vars.push((0..m).map(|_| (0.5 * normal(rng)).exp()).collect());
                } else {
                    means.push(vec![0.0; m]);
                    vars.push(vec![1.0; m]);
                }
            }
            ModelParams::Sprite(SpriteParams::new(traits, means, vars, anchors).expect("valid start"))
        }
        ModelKind::Ord | ModelKind::Lord => {
            let mut difficulties = Vec::new();
            let mut bins = Vec::new();
            let mut perms = Vec::new();
            for &m in cats {
                let mut b = OrdBlock::quantile_start(m);
                if random {
                    b.difficulty = normal(rng);
                    let mut edge = 0.0;
                    for e in b.bins.iter_mut().skip(1) {
                        edge += 0.25 + rng.random::<f64>();
                        *e = edge;
                    }
                    if kind == ModelKind::Lord {
                        b.perm.shuffle(rng);
                    }
                }
                difficulties.push(b.difficulty);
                bins.push(b.bins);
                perms.push(b.perm);
            }
            let p = OrdParams::new(traits, difficulties, bins, perms).expect("valid start");
            if kind == ModelKind::Lord {
                ModelParams::Lord(p)
            } else {
                ModelParams::Ord(p)
            }
        }
        ModelKind::Nrm => {
            let draw = |m: usize, rng: &mut StreamRng| -> Vec<f64> {
                (0..m).map(|_| if random { StandardNormal.sample(rng) } else { 0.0 }).collect()
            };
            let betas = cats.iter().map(|&m| draw(m, rng)).collect();
            let alphas = cats.iter().map(|&m| draw(m, rng)).collect();
            ModelParams::Nrm(NrmParams::new(traits, betas, alphas).expect("valid start"))
        }
        ModelKind::Gpcm => {
            let beta = cats
                .iter()
                .map(|_| if random { 1.0 + 0.5 * normal(rng) } else { 1.0 })
                .collect();
            let alphas = cats
                .iter()
                .map(|&m| (0..m).map(|_| if random { normal(rng) } else { 0.0 }).collect())
                .collect();
            ModelParams::Gpcm(GpcmParams::new(traits, beta, alphas).expect("valid start"))
        }
    }
}

/// Observed responses plus uniform draws for the unobserved cells, 0-based.
fn initial_responses(data: &ResponseMatrix, rng: &mut StreamRng) -> Vec<usize> {
    let (n, q) = (data.n_respondents(), data.n_questions());
    let mut out = vec![0usize; n * q];
    for i in 0..n {
        for j in 0..q {
            out[i * q + j] = match data.get(i, j) {
                Some(y) => y - 1,
                None => rng.random_range(0..data.n_categories(j)),
            };
        }
    }
    out
}

struct Context<'a> {
    data: &'a ResponseMatrix,
    hyper: &'a Hyperparams,
    cfg: &'a FitConfig,
    trait_mean: f64,
    trait_var: f64,
    kind: ModelKind,
}

struct Chain<'a, Q: QuestionBlock> {
    ctx: Context<'a>,
    n: usize,
    q: usize,
    traits: Vec<f64>,
    blocks: Vec<Q>,
    responses: Vec<usize>,
    missing: Vec<usize>,
    cell_ll: Vec<f64>,
    row_buf: Vec<f64>,
    col_buf: Vec<f64>,
    rng: StreamRng,
}

impl<'a, Q: QuestionBlock> Chain<'a, Q> {
    fn trait_prior(&self, z: f64) -> f64 {
        log_normal_pdf(z, self.ctx.trait_mean, self.ctx.trait_var)
    }

    fn recompute_all(&mut self) {
        let (q, blocks, traits, responses) = (self.q, &self.blocks, &self.traits, &self.responses);
        self.cell_ll.par_chunks_mut(q).enumerate().for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = blocks[j].log_prob(traits[i], responses[i * q + j]);
            }
        });
    }

    fn trait_sweep(&mut self) -> usize {
        let sd = self.ctx.cfg.proposal_trait_sd;
        let proposals: Vec<f64> = self
            .traits
            .iter()
            .map(|&z| z + sd * Distribution::<f64>::sample(&StandardNormal, &mut self.rng))
            .collect();
        let uniforms: Vec<f64> = (0..self.n).map(|_| self.rng.random::<f64>()).collect();
        let (q, blocks, responses, cell_ll) = (self.q, &self.blocks, &self.responses, &self.cell_ll);
        let deltas: Vec<f64> = self
            .row_buf
            .par_chunks_mut(q)
            .enumerate()
            .map(|(i, row)| {
                let z = proposals[i];
                let mut d = 0.0;
                for j in 0..q {
                    let l = blocks[j].log_prob(z, responses[i * q + j]);
                    row[j] = l;
                    d += l - cell_ll[i * q + j];
                }
                d
            })
            .collect();
        let mut accepted = 0;
        for i in 0..self.n {
            let log_ratio = deltas[i] + self.trait_prior(proposals[i]) - self.trait_prior(self.traits[i]);
            if accept_with_uniform(log_ratio, uniforms[i]) {
                self.traits[i] = proposals[i];
                self.cell_ll[i * q..(i + 1) * q].copy_from_slice(&self.row_buf[i * q..(i + 1) * q]);
                accepted += 1;
            }
        }
        accepted
    }

    /// Evaluate each candidate block against its column; `None` candidates
    /// are skipped. Returns the log-likelihood difference per question.
    fn column_deltas(&mut self, candidates: &[Option<Q>]) -> Vec<f64> {
        let (n, q) = (self.n, self.q);
        let (traits, responses, cell_ll) = (&self.traits, &self.responses, &self.cell_ll);
        self.col_buf
            .par_chunks_mut(n)
            .enumerate()
            .map(|(j, col)| {
                let Some(block) = &candidates[j] else {
                    return f64::NEG_INFINITY;
                };
                let mut d = 0.0;
                for i in 0..n {
                    let l = block.log_prob(traits[i], responses[i * q + j]);
                    col[i] = l;
                    d += l - cell_ll[i * q + j];
                }
                d
            })
            .collect()
    }

    fn install_column(&mut self, j: usize, block: Q) {
        let (n, q) = (self.n, self.q);
        for i in 0..n {
            self.cell_ll[i * q + j] = self.col_buf[j * n + i];
        }
        self.blocks[j] = block;
    }

    fn question_sweep(&mut self) -> usize {
        let mut candidates = Vec::with_capacity(self.q);
        let mut extra = Vec::with_capacity(self.q);
        for block in &self.blocks {
            let (next, hastings) = block.propose(self.ctx.cfg, &mut self.rng);
            let prior_new = next.log_prior(self.ctx.hyper);
            if prior_new == f64::NEG_INFINITY {
                candidates.push(None);
                extra.push(f64::NEG_INFINITY);
            } else {
                extra.push(prior_new - block.log_prior(self.ctx.hyper) + hastings);
                candidates.push(Some(next));
            }
        }
        let uniforms: Vec<f64> = (0..self.q).map(|_| self.rng.random::<f64>()).collect();
        let deltas = self.column_deltas(&candidates);
        let mut accepted = 0;
        for (j, cand) in candidates.into_iter().enumerate() {
            let Some(block) = cand else { continue };
            if accept_with_uniform(deltas[j] + extra[j], uniforms[j]) {
                self.install_column(j, block);
                accepted += 1;
            }
        }
        accepted
    }

    fn permutation_sweep(&mut self) -> usize {
        let candidates: Vec<Option<Q>> = self
            .blocks
            .iter()
            .map(|b| b.propose_permutation(&mut self.rng))
            .collect();
        let uniforms: Vec<f64> = (0..self.q).map(|_| self.rng.random::<f64>()).collect();
        let deltas = self.column_deltas(&candidates);
        let mut accepted = 0;
        for (j, cand) in candidates.into_iter().enumerate() {
            let Some(block) = cand else { continue };
            if accept_with_uniform(deltas[j], uniforms[j]) {
                self.install_column(j, block);
                accepted += 1;
            }
        }
        accepted
    }

    fn joint_sweep(&mut self) -> bool {
        let sd = self.ctx.cfg.proposal_trait_sd;
        let traits_new: Vec<f64> = self
            .traits
            .iter()
            .map(|&z| z + sd * Distribution::<f64>::sample(&StandardNormal, &mut self.rng))
            .collect();
        let mut extra = 0.0;
        let mut blocks_new = Vec::with_capacity(self.q);
        for block in &self.blocks {
            let (next, hastings) = block.propose(self.ctx.cfg, &mut self.rng);
            extra += next.log_prior(self.ctx.hyper) - block.log_prior(self.ctx.hyper) + hastings;
            blocks_new.push(next);
        }
        for (new, old) in traits_new.iter().zip(&self.traits) {
            extra += self.trait_prior(*new) - self.trait_prior(*old);
        }
        let u = self.rng.random::<f64>();
        if extra == f64::NEG_INFINITY || extra.is_nan() {
            return false;
        }
        let (q, responses, cell_ll) = (self.q, &self.responses, &self.cell_ll);
        let row_deltas: Vec<f64> = self
            .row_buf
            .par_chunks_mut(q)
            .enumerate()
            .map(|(i, row)| {
                let mut d = 0.0;
                for j in 0..q {
                    let l = blocks_new[j].log_prob(traits_new[i], responses[i * q + j]);
                    row[j] = l;
                    d += l - cell_ll[i * q + j];
                }
                d
            })
            .collect();
        let delta: f64 = row_deltas.iter().sum();
        if accept_with_uniform(delta + extra, u) {
            self.traits = traits_new;
            self.blocks = blocks_new;
            std::mem::swap(&mut self.cell_ll, &mut self.row_buf);
            true
        } else {
            false
        }
    }

    fn impute(&mut self) {
        let q = self.q;
        let mut buf = vec![0.0; self.ctx.data.max_categories()];
        for &idx in &self.missing {
            let (i, j) = (idx / q, idx % q);
            let m = self.blocks[j].n_categories();
            self.blocks[j].log_probs(self.traits[i], &mut buf[..m]);
            let y = sample_categorical(&buf[..m], self.rng.random::<f64>());
            self.responses[idx] = y;
            self.cell_ll[idx] = buf[y];
        }
    }

    fn observed_log_likelihood(&self) -> f64 {
        self.cell_ll
            .iter()
            .zip(self.ctx.data.observed_mask())
            .filter(|(_, &o)| o)
            .map(|(l, _)| *l)
            .sum()
    }

    fn imputed_assignments(&self) -> Vec<CellAssignment> {
        self.missing
            .iter()
            .map(|&idx| CellAssignment {
                respondent: idx / self.q,
                question: idx % self.q,
                category: self.responses[idx] + 1,
            })
            .collect()
    }
}

fn drive<Q: QuestionBlock + IntoParams>(
    ctx: Context<'_>,
    traits: Vec<f64>,
    blocks: Vec<Q>,
    responses: Vec<usize>,
    rng: StreamRng,
    mut observer: Option<&mut dyn FnMut(&ChainState)>,
) -> Result<ChainOutput> {
    let data = ctx.data;
    let (n, q) = (data.n_respondents(), data.n_questions());
    let missing: Vec<usize> = data
        .observed_mask()
        .iter()
        .enumerate()
        .filter(|(_, &o)| !o)
        .map(|(idx, _)| idx)
        .collect();
    let cfg = *ctx.cfg;
    let kind = ctx.kind;
    let learn_perm = kind == ModelKind::Lord;
    let joint = cfg.acceptance_mode == AcceptanceMode::Joint;

    let mut chain = Chain {
        ctx,
        n,
        q,
        traits,
        blocks,
        responses,
        missing,
        cell_ll: vec![0.0; n * q],
        row_buf: vec![0.0; n * q],
        col_buf: vec![0.0; n * q],
        rng,
    };
    chain.recompute_all();
    if !chain.cell_ll.iter().sum::<f64>().is_finite() {
        return Err(Error::NonFiniteLikelihood(0));
    }

    let mut flat = Vec::new();
    for b in &chain.blocks {
        b.flatten_into(&mut flat);
    }
    let mut trait_sum = vec![0.0; n];
    let mut block_sum = vec![0.0; flat.len()];
    let mut mode_counts: Vec<Vec<u32>> = chain
        .missing
        .iter()
        .map(|&idx| vec![0; data.n_categories(idx % q)])
        .collect();
    let mut perm_counts: Vec<BTreeMap<Vec<usize>, u32>> = vec![BTreeMap::new(); q];
    let (mut acc_traits, mut acc_questions, mut acc_perms) = (0usize, 0usize, 0usize);
    let total = cfg.total_iterations();
    let mut trace = Vec::with_capacity(total);

    for t in 1..=total {
        let (a_t, a_q) = if joint {
            if chain.joint_sweep() {
                (n, q)
            } else {
                (0, 0)
            }
        } else {
            (chain.trait_sweep(), chain.question_sweep())
        };
        if learn_perm {
            acc_perms += chain.permutation_sweep();
        }
        chain.impute();
        acc_traits += a_t;
        acc_questions += a_q;

        let observed_ll = chain.observed_log_likelihood();
        if !observed_ll.is_finite() || !chain.cell_ll.iter().sum::<f64>().is_finite() {
            return Err(Error::NonFiniteLikelihood(t));
        }
        trace.push(TraceRow {
            iteration: t,
            log_likelihood: observed_ll,
            accept_rate_traits: a_t as f64 / n as f64,
            accept_rate_questions: a_q as f64 / q as f64,
        });

        if t > cfg.burn_in_iterations {
            for (s, z) in trait_sum.iter_mut().zip(&chain.traits) {
                *s += z;
            }
            flat.clear();
            for b in &chain.blocks {
                b.flatten_into(&mut flat);
            }
            for (s, v) in block_sum.iter_mut().zip(&flat) {
                *s += v;
            }
            for (counts, &idx) in mode_counts.iter_mut().zip(&chain.missing) {
                counts[chain.responses[idx]] += 1;
            }
            if learn_perm {
                for (counts, b) in perm_counts.iter_mut().zip(&chain.blocks) {
                    if let Some(p) = b.permutation() {
                        *counts.entry(p.to_vec()).or_insert(0) += 1;
                    }
                }
            }
        }

        if let Some(obs) = observer.as_deref_mut() {
            let imputed = chain.imputed_assignments();
            let params = Q::to_params(kind, &chain.traits, &chain.blocks);
            let log_likelihood = chain.cell_ll.iter().sum();
            obs(&ChainState { params, imputed_responses: imputed, log_likelihood, iteration: t });
        }
    }

    let samples = cfg.sample_iterations as f64;
    let trait_means: Vec<f64> = trait_sum.iter().map(|s| s / samples).collect();
    let block_means: Vec<f64> = block_sum.iter().map(|s| s / samples).collect();
    let imputed_modes = chain
        .missing
        .iter()
        .zip(&mode_counts)
        .map(|(&idx, counts)| {
            let best = counts
                .iter()
                .enumerate()
                .fold(0, |best, (k, &c)| if c > counts[best] { k } else { best });
            CellAssignment { respondent: idx / q, question: idx % q, category: best + 1 }
        })
        .collect();
    let iterations = total as f64;
    let permutation_mode = learn_perm.then(|| {
        perm_counts
            .iter()
            .map(|counts| {
                // BTreeMap order makes the lexicographically smallest win ties
                let mut best: Option<(&Vec<usize>, u32)> = None;
                for (perm, &c) in counts {
                    if best.is_none_or(|(_, bc)| c > bc) {
                        best = Some((perm, c));
                    }
                }
                best.map(|(p, _)| p.iter().map(|s| s + 1).collect()).unwrap_or_default()
            })
            .collect()
    });
    let summary = PosteriorSummary {
        model: kind,
        respondent_ids: data.respondent_ids().to_vec(),
        question_ids: data.question_ids().to_vec(),
        burn_in_iterations: cfg.burn_in_iterations,
        sample_iterations: cfg.sample_iterations,
        trait_means,
        question_params: Q::summarize(kind, &chain.blocks, &block_means),
        imputed_modes,
        acceptance_rates: AcceptanceRates {
            traits: acc_traits as f64 / (iterations * n as f64),
            questions: acc_questions as f64 / (iterations * q as f64),
            permutations: learn_perm.then(|| acc_perms as f64 / (iterations * q as f64)),
        },
        permutation_mode,
    };
    Ok(ChainOutput { summary, trace })
}

/// Conversions between chain blocks and the public parameter types.
trait IntoParams: Sized {
    fn to_params(kind: ModelKind, traits: &[f64], blocks: &[Self]) -> ModelParams;

    /// Unflatten posterior means laid out as by `flatten_into`.
    fn summarize(kind: ModelKind, blocks: &[Self], flat_means: &[f64]) -> QuestionSummary;
}

impl IntoParams for SpriteBlock {
    fn to_params(_: ModelKind, traits: &[f64], blocks: &[Self]) -> ModelParams {
        ModelParams::Sprite(SpriteParams {
            latent_traits: traits.to_vec(),
            means: blocks.iter().map(|b| b.means.clone()).collect(),
            variances: blocks.iter().map(|b| b.variances.clone()).collect(),
            anchors: blocks.iter().map(|b| b.anchor).collect(),
        })
    }

    fn summarize(_: ModelKind, blocks: &[Self], flat: &[f64]) -> QuestionSummary {
        let mut it = flat.iter().copied();
        let mut means = Vec::new();
        let mut variances = Vec::new();
        for b in blocks {
            let m = b.means.len();
            let mut mu: Vec<f64> = it.by_ref().take(m).collect();
            let mut nu: Vec<f64> = it.by_ref().take(m).collect();
            // anchors are constant; restore exact values lost to averaging
            mu[b.anchor] = 0.0;
            nu[b.anchor] = 1.0;
            means.push(mu);
            variances.push(nu);
        }
        QuestionSummary::Sprite { means, variances, anchors: blocks.iter().map(|b| b.anchor).collect() }
    }
}

impl IntoParams for OrdBlock {
    fn to_params(kind: ModelKind, traits: &[f64], blocks: &[Self]) -> ModelParams {
        let p = OrdParams {
            latent_traits: traits.to_vec(),
            difficulties: blocks.iter().map(|b| b.difficulty).collect(),
            bins: blocks.iter().map(|b| b.bins.clone()).collect(),
            permutations: blocks.iter().map(|b| b.perm.clone()).collect(),
        };
        if kind == ModelKind::Lord {
            ModelParams::Lord(p)
        } else {
            ModelParams::Ord(p)
        }
    }

    fn summarize(_: ModelKind, blocks: &[Self], flat: &[f64]) -> QuestionSummary {
        let mut it = flat.iter().copied();
        let mut difficulties = Vec::new();
        let mut bins = Vec::new();
        for b in blocks {
            difficulties.push(it.next().unwrap_or_default());
            let mut edges: Vec<f64> = it.by_ref().take(b.bins.len()).collect();
            edges[0] = 0.0;
            bins.push(edges);
        }
        QuestionSummary::Ord { difficulties, bins }
    }
}

impl IntoParams for NrmBlock {
    fn to_params(_: ModelKind, traits: &[f64], blocks: &[Self]) -> ModelParams {
        ModelParams::Nrm(NrmParams {
            latent_traits: traits.to_vec(),
            discriminations: blocks.iter().map(|b| b.betas.clone()).collect(),
            difficulties: blocks.iter().map(|b| b.alphas.clone()).collect(),
        })
    }

    fn summarize(_: ModelKind, blocks: &[Self], flat: &[f64]) -> QuestionSummary {
        let mut it = flat.iter().copied();
        let mut discriminations = Vec::new();
        let mut difficulties = Vec::new();
        for b in blocks {
            let m = b.betas.len();
            discriminations.push(it.by_ref().take(m).collect());
            difficulties.push(it.by_ref().take(m).collect());
        }
        QuestionSummary::Nrm { discriminations, difficulties }
    }
}

impl IntoParams for GpcmBlock {
    fn to_params(_: ModelKind, traits: &[f64], blocks: &[Self]) -> ModelParams {
        ModelParams::Gpcm(GpcmParams {
            latent_traits: traits.to_vec(),
            discrimination: blocks.iter().map(|b| b.beta).collect(),
            thresholds: blocks.iter().map(|b| b.alphas.clone()).collect(),
        })
    }

    fn summarize(_: ModelKind, blocks: &[Self], flat: &[f64]) -> QuestionSummary {
        let mut it = flat.iter().copied();
        let mut discrimination = Vec::new();
        let mut thresholds = Vec::new();
        for b in blocks {
            discrimination.push(it.next().unwrap_or_default());
            thresholds.push(it.by_ref().take(b.alphas.len()).collect());
        }
        QuestionSummary::Gpcm { discrimination, thresholds }
    }
}
