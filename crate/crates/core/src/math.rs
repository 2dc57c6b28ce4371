//! Numerically stable building blocks shared by the likelihood kernels.

use libm::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// `ln(sum(exp(x)))` with the max shifted out. Empty input gives `-inf`.
#[inline]
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Subtract the log normaliser in place, leaving log-probabilities.
#[inline]
pub fn log_normalize(logits: &mut [f64]) {
    let lse = logsumexp(logits);
    for v in logits.iter_mut() {
        *v -= lse;
    }
}

/// Log density of `N(x | mean, var)`.
#[inline]
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Standard normal CDF via `0.5 * erfc(-x / sqrt 2)`.
///
/// libm's erfc is accurate to a couple of ulps; statrs' was off by about
/// 1e-12 near the 97.5% point.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Phi(x)`, finite for all finite `x`.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return normal_cdf(x).ln();
    }
    // Mills-ratio asymptotic series; relative error < 1e-13 for x <= -30.
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    -0.5 * x2 - (-x).ln() - 0.5 * LN_2PI + series.ln()
}

/// `ln(1 - exp(a))` for `a <= 0`.
#[inline]
fn log1m_exp(a: f64) -> f64 {
    if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// `ln(Phi(upper) - Phi(lower))` for `lower < upper`, either end may be infinite.
///
/// Both ends in the same tail are handled by subtracting the smaller tail
/// mass, so near-equal CDF values do not cancel.
pub fn log_normal_interval(lower: f64, upper: f64) -> f64 {
    if lower >= upper {
        return f64::NEG_INFINITY;
    }
    if lower == f64::NEG_INFINITY {
        return log_normal_cdf(upper);
    }
    if upper == f64::INFINITY {
        return log_normal_cdf(-lower);
    }
    if lower >= 0.0 {
        // upper tail: Q(lower) - Q(upper), Q(x) = Phi(-x)
        let hi = log_normal_cdf(-lower);
        let lo = log_normal_cdf(-upper);
        hi + log1m_exp(lo - hi)
    } else if upper <= 0.0 {
        let hi = log_normal_cdf(upper);
        let lo = log_normal_cdf(lower);
        hi + log1m_exp(lo - hi)
    } else {
        // straddles zero: both tails are at most one half
        (1.0 - normal_cdf(lower) - normal_cdf(-upper)).ln()
    }
}

/// Standard normal quantile function, polished by one Newton step.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let x = Normal::standard().inverse_cdf(p);
    if !x.is_finite() {
        return x;
    }
    let density = (-0.5 * (LN_2PI + x * x)).exp();
    x - (normal_cdf(x) - p) / density
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct_sum() {
        let v = [-1.0, -2.0, -3.0];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v) - direct).abs() < 1e-15);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert!((logsumexp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        // Phi(-0.5), Phi(1.96) from tables
        assert!((normal_cdf(-0.5) - 0.308_537_538_725_986_9).abs() < 1e-14);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-14);
    }

    #[test]
    fn log_cdf_is_continuous_at_switch() {
        let a = log_normal_cdf(-30.0 + 1e-9);
        let b = log_normal_cdf(-30.0 - 1e-9);
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        assert!(log_normal_cdf(-200.0).is_finite());
    }

    #[test]
    fn interval_handles_far_tails() {
        // both edges deep in the upper tail
        let v = log_normal_interval(40.0, 41.0);
        assert!(v.is_finite());
        assert!((v - log_normal_cdf(-40.0)).abs() < 1e-6);
        let mid = log_normal_interval(-0.5, 0.5).exp();
        assert!((mid - (normal_cdf(0.5) - normal_cdf(-0.5))).abs() < 1e-15);
        let upper = log_normal_interval(0.5, 1.5).exp();
        assert!((upper - (normal_cdf(1.5) - normal_cdf(0.5))).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [0.2, 0.4, 0.6, 0.8] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-12);
        }
    }
}
