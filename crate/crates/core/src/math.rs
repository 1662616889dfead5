//! Log-domain arithmetic and the special functions behind the statistics layer.
//!
//! Everything here is `no_std`; transcendental functions come from `libm`.

use libm::{exp, fabs, lgamma, log, log1p};

/// `ln(Σ exp(x_i))`, computed by factoring out the maximum.
///
/// Returns `-∞` for an empty slice or when every input is `-∞`. A slice with a
/// single finite element returns that element bit-for-bit.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + log(sum)
}

/// `ln σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -log1p(exp(-x))
    } else {
        x - log1p(exp(x))
    }
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    exp(log_sigmoid(x))
}

/// Natural log of `n choose k`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    lgamma(n as f64 + 1.0) - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0)
}

const CF_MAX_ITER: usize = 20_000;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if fabs(d) < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if fabs(d) < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if fabs(d) < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fabs(del - 1.0) < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x.is_nan() || a <= 0.0 || b <= 0.0 {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log1p(-x);
    if x < (a + 1.0) / (a + b + 2.0) {
        exp(ln_front) * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - exp(ln_front) * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// CDF of Student's t.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = student_t_two_sided_p(t, df) / 2.0;
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t, found by bisection on the two-sided tail.
pub fn student_t_quantile(prob: f64, df: f64) -> f64 {
    if !(0.0..=1.0).contains(&prob) || df <= 0.0 || df.is_nan() {
        return f64::NAN;
    }
    if prob == 0.5 {
        return 0.0;
    }
    if prob == 0.0 {
        return f64::NEG_INFINITY;
    }
    if prob == 1.0 {
        return f64::INFINITY;
    }
    let upper = prob > 0.5;
    // two-sided tail mass corresponding to |t|
    let target = if upper { 2.0 * (1.0 - prob) } else { 2.0 * prob };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while student_t_two_sided_p(hi, df) > target {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if student_t_two_sided_p(mid, df) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    if upper {
        t
    } else {
        -t
    }
}

/// Exact binomial tail sums `(P(X ≤ k), P(X ≥ k))` for `X ~ Bin(n, p)`.
///
/// For `p = 0.5` and `n ≤ 62` the sums are formed from exact integer
/// coefficients, so dyadic results like `8/128` come out exact.
pub fn binomial_tails(k: u64, n: u64, p: f64) -> (f64, f64) {
    debug_assert!(k <= n);
    if p == 0.5 && n <= 62 {
        let mut coeff: u128 = 1;
        let mut lower: u128 = 0;
        let mut upper: u128 = 0;
        for i in 0..=n {
            if i <= k {
                lower += coeff;
            }
            if i >= k {
                upper += coeff;
            }
            coeff = coeff * u128::from(n - i) / u128::from(i + 1);
        }
        let denom = libm::ldexp(1.0, n as i32);
        return (lower as f64 / denom, upper as f64 / denom);
    }
    let pmf = |i: u64| -> f64 {
        if p == 0.0 {
            return if i == 0 { 1.0 } else { 0.0 };
        }
        if p == 1.0 {
            return if i == n { 1.0 } else { 0.0 };
        }
        exp(ln_choose(n, i) + i as f64 * log(p) + (n - i) as f64 * log1p(-p))
    };
    let lower: f64 = (0..=k).map(pmf).sum();
    let upper: f64 = (k..=n).map(pmf).sum();
    (lower.min(1.0), upper.min(1.0))
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample variance (n − 1 denominator); `None` below two observations.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some(ss / (xs.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_single_element_is_identity() {
        assert_eq!(log_sum_exp(&[-0.69315]), -0.69315);
        assert_eq!(log_sum_exp(&[-3.25, f64::NEG_INFINITY]), -3.25);
    }

    #[test]
    fn lse_empty_and_all_neg_inf() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn lse_matches_naive_sum_in_safe_range() {
        let xs = [-1.6094, -1.6094, -0.3, -7.0];
        let naive = xs.iter().map(|&x| libm::exp(x)).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_stable_at_underflow_edge() {
        // exp(-745) is the smallest subnormal; the naive sum loses it entirely
        let v = log_sum_exp(&[-745.0, -745.0]);
        assert!((v - (-745.0 + core::f64::consts::LN_2)).abs() < 1e-12);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + core::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn log_sigmoid_difference_is_the_gap() {
        for g in [-30.0, -3.0, -1.0, 0.0, 1.0, 2.91, 40.0] {
            let d = log_sigmoid(g) - log_sigmoid(-g);
            assert!((d - g).abs() < 1e-12, "{g}: {d}");
        }
    }

    #[test]
    fn incomplete_beta_known_values() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        assert!((regularized_incomplete_beta(3.0, 1.0, 0.5) - 0.125).abs() < 1e-14);
        // symmetry I_x(a,b) = 1 - I_{1-x}(b,a)
        let a = regularized_incomplete_beta(2.5, 4.0, 0.2);
        let b = regularized_incomplete_beta(4.0, 2.5, 0.8);
        assert!((a + b - 1.0).abs() < 1e-13);
    }

    #[test]
    fn t_quantile_reference_values() {
        assert!((student_t_quantile(0.975, 1.0) - 12.706_204_736_432_095).abs() < 1e-9);
        assert!((student_t_quantile(0.975, 12.0) - 2.178_812_829_663_418).abs() < 1e-9);
        assert!((student_t_quantile(0.025, 6.0) + 2.446_911_851_144_970).abs() < 1e-9);
    }

    #[test]
    fn t_cdf_is_consistent_with_quantile() {
        for df in [1.0, 2.0, 5.5, 30.0] {
            for p in [0.01, 0.2, 0.5, 0.9, 0.999] {
                let t = student_t_quantile(p, df);
                assert!((student_t_cdf(t, df) - p).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn binomial_tails_exact_dyadic() {
        let (lo, hi) = binomial_tails(6, 7, 0.5);
        assert_eq!(hi, 8.0 / 128.0);
        assert_eq!(lo, 127.0 / 128.0);
        let (_, hi) = binomial_tails(5, 7, 0.5);
        assert_eq!(hi, 29.0 / 128.0);
    }

    #[test]
    fn binomial_tails_general_p() {
        let (lo, hi) = binomial_tails(2, 5, 0.3);
        // P(X<=2) = 0.83692, P(X>=2) = 0.47178
        assert!((lo - 0.83692).abs() < 1e-12);
        assert!((hi - 0.47178).abs() < 1e-12);
    }
}
