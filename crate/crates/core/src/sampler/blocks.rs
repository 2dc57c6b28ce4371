//! Per-question parameter blocks: likelihood, prior and proposal for each model.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::config::{FitConfig, Hyperparams};
use crate::likelihood::{gpcm_log_probs, nrm_log_probs, ord_log_probs};
use crate::math::{log_normal_interval, log_normal_pdf, log_normalize, normal_quantile};

/// Everything the generic chain needs from one question's parameters.
pub(crate) trait QuestionBlock: Clone + Send + Sync {
    fn n_categories(&self) -> usize;

    /// `ln P(Y = y | trait)`, `y` 0-based.
    fn log_prob(&self, trait_value: f64, y: usize) -> f64;

    fn log_probs(&self, trait_value: f64, out: &mut [f64]);

    fn log_prior(&self, hyper: &Hyperparams) -> f64;

    /// Random-walk proposal and its log Hastings correction.
    fn propose<R: Rng + ?Sized>(&self, cfg: &FitConfig, rng: &mut R) -> (Self, f64);

    /// Continuous parameters, appended in a fixed order for averaging.
    fn flatten_into(&self, out: &mut Vec<f64>);

    /// Label permutation, for models that learn one.
    fn permutation(&self) -> Option<&[usize]> {
        None
    }

    /// Symmetric move on the label permutation, for models that learn one.
    fn propose_permutation<R: Rng + ?Sized>(&self, _rng: &mut R) -> Option<Self> {
        None
    }
}

/// Online log-sum-exp accumulator (one `exp` per term).
#[derive(Clone, Copy)]
struct OnlineLse {
    max: f64,
    sum: f64,
}

impl OnlineLse {
    #[inline]
    fn new() -> Self {
        OnlineLse { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    #[inline]
    fn push(&mut self, t: f64) {
        if t > self.max {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
        } else {
            self.sum += (t - self.max).exp();
        }
    }

    #[inline]
    fn value(self) -> f64 {
        self.max + self.sum.ln()
    }
}

#[inline]
fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw from `IG(shape, scale)` as the reciprocal of a gamma draw.
pub(crate) fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let gamma = Gamma::new(shape, 1.0 / scale).expect("positive inverse-gamma parameters");
    loop {
        let x = 1.0 / gamma.sample(rng);
        if x.is_finite() && x > 0.0 {
            return x;
        }
    }
}

/// Inverse-gamma log density without the `ln Gamma(shape)` term.
#[inline]
fn log_inverse_gamma_kernel(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - (shape + 1.0) * x.ln() - scale / x
}

#[cfg(test)]
pub(crate) fn log_inverse_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    log_inverse_gamma_kernel(x, shape, scale) - statrs::function::gamma::ln_gamma(shape)
}

/// Proposal for a variance: `IG(shape, old (shape - 1))`, whose mean is `old`.
/// Returns the new value and `ln q(old | new) - ln q(new | old)`.
pub(crate) fn propose_variance<R: Rng + ?Sized>(old: f64, shape: f64, rng: &mut R) -> (f64, f64) {
    let new = sample_inverse_gamma(shape, old * (shape - 1.0), rng);
    (new, variance_hastings(old, new, shape))
}

#[inline]
pub(crate) fn variance_hastings(old: f64, new: f64, shape: f64) -> f64 {
    let scale_new = new * (shape - 1.0);
    let scale_old = old * (shape - 1.0);
    log_inverse_gamma_kernel(old, shape, scale_new) - log_inverse_gamma_kernel(new, shape, scale_old)
}

// ---------------------------------------------------------------------------
// SPRITE

#[derive(Debug, Clone)]
pub(crate) struct SpriteBlock {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    log_var: Vec<f64>,
    inv_var: Vec<f64>,
    pub anchor: usize,
}

impl SpriteBlock {
    pub fn new(means: Vec<f64>, variances: Vec<f64>, anchor: usize) -> Self {
        let log_var = variances.iter().map(|v| v.ln()).collect();
        let inv_var = variances.iter().map(|v| 1.0 / v).collect();
        SpriteBlock { means, variances, log_var, inv_var, anchor }
    }

    #[inline]
    fn term(&self, z: f64, k: usize) -> f64 {
        let d = z - self.means[k];
        -0.5 * (self.log_var[k] + d * d * self.inv_var[k])
    }
}

impl QuestionBlock for SpriteBlock {
    fn n_categories(&self) -> usize {
        self.means.len()
    }

    #[inline]
    fn log_prob(&self, z: f64, y: usize) -> f64 {
        let mut lse = OnlineLse::new();
        for k in 0..self.means.len() {
            lse.push(self.term(z, k));
        }
        self.term(z, y) - lse.value()
    }

    fn log_probs(&self, z: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.term(z, k);
        }
        log_normalize(out);
    }

    fn log_prior(&self, hyper: &Hyperparams) -> f64 {
        let mut lp = 0.0;
        for k in 0..self.means.len() {
            if k == self.anchor {
                continue;
            }
            lp += log_normal_pdf(self.means[k], 0.0, hyper.prior_mean_var);
            // normalising constant dropped; it cancels in every ratio
            lp += log_inverse_gamma_kernel(self.variances[k], hyper.prior_var_shape, hyper.prior_var_scale);
        }
        lp
    }

    fn propose<R: Rng + ?Sized>(&self, cfg: &FitConfig, rng: &mut R) -> (Self, f64) {
        let mut means = self.means.clone();
        let mut vars = self.variances.clone();
        let mut hastings = 0.0;
        for k in 0..means.len() {
            if k == self.anchor {
                continue;
            }
            means[k] += cfg.proposal_mean_sd * std_normal(rng);
        }
        for k in 0..vars.len() {
            if k == self.anchor {
                continue;
            }
            let (v, h) = propose_variance(vars[k], cfg.proposal_var_shape, rng);
            vars[k] = v;
            hastings += h;
        }
        (SpriteBlock::new(means, vars, self.anchor), hastings)
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.means);
        out.extend_from_slice(&self.variances);
    }
}

// ---------------------------------------------------------------------------
// ORD / LORD

#[derive(Debug, Clone)]
pub(crate) struct OrdBlock {
    pub difficulty: f64,
    pub bins: Vec<f64>,
    pub perm: Vec<usize>,
}

impl OrdBlock {
    /// Edges at standard-normal quantiles `k / M`, shifted so the first sits
    /// at 0; the difficulty absorbs the shift.
    pub fn quantile_start(m: usize) -> Self {
        let q: Vec<f64> = (1..m).map(|k| normal_quantile(k as f64 / m as f64)).collect();
        let shift = q[0];
        OrdBlock {
            difficulty: shift,
            bins: q.iter().map(|v| v - shift).collect(),
            perm: (0..m).collect(),
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.bins[0] == 0.0 && self.bins.windows(2).all(|w| w[0] < w[1])
    }
}

impl QuestionBlock for OrdBlock {
    fn n_categories(&self) -> usize {
        self.bins.len() + 1
    }

    #[inline]
    fn log_prob(&self, theta: f64, y: usize) -> f64 {
        let z = theta - self.difficulty;
        let m = self.bins.len() + 1;
        let slot = self.perm[y];
        let lower = if slot == 0 { f64::NEG_INFINITY } else { self.bins[slot - 1] - z };
        let upper = if slot == m - 1 { f64::INFINITY } else { self.bins[slot] - z };
        log_normal_interval(lower, upper)
    }

    fn log_probs(&self, theta: f64, out: &mut [f64]) {
        ord_log_probs(theta - self.difficulty, &self.bins, &self.perm, out);
    }

    fn log_prior(&self, hyper: &Hyperparams) -> f64 {
        if !self.is_ordered() {
            return f64::NEG_INFINITY;
        }
        let mut lp = log_normal_pdf(self.difficulty, 0.0, hyper.ord_prior_diff_var);
        for &b in &self.bins[1..] {
            lp += log_normal_pdf(b, 0.0, hyper.ord_prior_bin_var);
        }
        lp
    }

    fn propose<R: Rng + ?Sized>(&self, cfg: &FitConfig, rng: &mut R) -> (Self, f64) {
        let mut next = self.clone();
        next.difficulty += cfg.proposal_mean_sd * std_normal(rng);
        for b in next.bins.iter_mut().skip(1) {
            *b += cfg.proposal_mean_sd * std_normal(rng);
        }
        (next, 0.0)
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.push(self.difficulty);
        out.extend_from_slice(&self.bins);
    }

    fn permutation(&self) -> Option<&[usize]> {
        Some(&self.perm)
    }

    fn propose_permutation<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Self> {
        let mut next = self.clone();
        next.perm = super::propose_transposition(&self.perm, rng);
        Some(next)
    }
}

// ---------------------------------------------------------------------------
// NRM

#[derive(Debug, Clone)]
pub(crate) struct NrmBlock {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl QuestionBlock for NrmBlock {
    fn n_categories(&self) -> usize {
        self.betas.len()
    }

    #[inline]
    fn log_prob(&self, theta: f64, y: usize) -> f64 {
        let mut lse = OnlineLse::new();
        for k in 0..self.betas.len() {
            lse.push(self.betas[k] * (theta - self.alphas[k]));
        }
        self.betas[y] * (theta - self.alphas[y]) - lse.value()
    }

    fn log_probs(&self, theta: f64, out: &mut [f64]) {
        nrm_log_probs(theta, &self.betas, &self.alphas, out);
    }

    fn log_prior(&self, hyper: &Hyperparams) -> f64 {
        self.betas
            .iter()
            .chain(&self.alphas)
            .map(|&v| log_normal_pdf(v, 0.0, hyper.prior_mean_var))
            .sum()
    }

    fn propose<R: Rng + ?Sized>(&self, cfg: &FitConfig, rng: &mut R) -> (Self, f64) {
        let mut next = self.clone();
        for v in next.betas.iter_mut().chain(next.alphas.iter_mut()) {
            *v += cfg.proposal_mean_sd * std_normal(rng);
        }
        (next, 0.0)
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.betas);
        out.extend_from_slice(&self.alphas);
    }
}

// ---------------------------------------------------------------------------
// GPCM

#[derive(Debug, Clone)]
pub(crate) struct GpcmBlock {
    pub beta: f64,
    pub alphas: Vec<f64>,
}

impl QuestionBlock for GpcmBlock {
    fn n_categories(&self) -> usize {
        self.alphas.len()
    }

    #[inline]
    fn log_prob(&self, theta: f64, y: usize) -> f64 {
        let mut lse = OnlineLse::new();
        let mut acc = 0.0;
        let mut target = 0.0;
        for (k, &a) in self.alphas.iter().enumerate() {
            acc += self.beta * (theta - a);
            lse.push(acc);
            if k == y {
                target = acc;
            }
        }
        target - lse.value()
    }

    fn log_probs(&self, theta: f64, out: &mut [f64]) {
        gpcm_log_probs(theta, self.beta, &self.alphas, out);
    }

    fn log_prior(&self, hyper: &Hyperparams) -> f64 {
        std::iter::once(&self.beta)
            .chain(&self.alphas)
            .map(|&v| log_normal_pdf(v, 0.0, hyper.prior_mean_var))
            .sum()
    }

    fn propose<R: Rng + ?Sized>(&self, cfg: &FitConfig, rng: &mut R) -> (Self, f64) {
        let mut next = self.clone();
        next.beta += cfg.proposal_mean_sd * std_normal(rng);
        for a in next.alphas.iter_mut() {
            *a += cfg.proposal_mean_sd * std_normal(rng);
        }
        (next, 0.0)
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.push(self.beta);
        out.extend_from_slice(&self.alphas);
    }
}
