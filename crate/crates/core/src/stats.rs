//! Cluster-robust means, t-tests, the exact binomial test, Pearson
//! correlation and the maker-direction tests.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::Bloc;
use crate::math::{binomial_tails, mean, sample_variance, student_t_quantile, student_t_two_sided_p};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("need at least two clusters")]
    SingleCluster,
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("k = {k} exceeds n = {n}")]
    BadCount { k: u64, n: u64 },
    #[error("input contains a non-finite value")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    ClusterRobust,
    OneSampleT,
    PairedT,
    ExactBinomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    /// Sample mean; for the binomial test the observed proportion `k / n`.
    pub mean: f64,
    /// 95% half-width; absent for the binomial test.
    pub ci_half_width: Option<f64>,
    /// `t`, or `k` for the binomial test.
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub n_clusters: Option<usize>,
    pub df: Option<f64>,
    pub test_kind: TestKind,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// `t` and its two-sided p for a mean and standard error. A zero standard
/// error gives `t = ±∞` and `p = 0` unless the mean is exactly 0.
fn t_from(m: f64, se: f64, df: f64) -> (f64, f64) {
    if se == 0.0 {
        return if m == 0.0 { (0.0, 1.0) } else { (m.signum() * f64::INFINITY, 0.0) };
    }
    let t = m / se;
    (t, student_t_two_sided_p(t, df))
}

/// Grand mean with a cluster-level standard error: the sample standard
/// deviation of the cluster means over `√G`, with a `t(G − 1)` interval.
///
/// With one value per cluster this is the ordinary one-sample interval.
pub fn cluster_robust_summary<K: Ord>(values: &[(K, f64)]) -> Result<StatsSummary, StatsError> {
    let xs: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    check_finite(&xs)?;
    let mut clusters: BTreeMap<&K, (f64, usize)> = BTreeMap::new();
    for (k, v) in values {
        let e = clusters.entry(k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let g = clusters.len();
    if g < 2 {
        return Err(StatsError::SingleCluster);
    }
    let cluster_means: Vec<f64> = clusters.values().map(|(s, n)| s / *n as f64).collect();
    let grand = mean(&xs).unwrap_or(0.0);
    let var = sample_variance(&cluster_means).unwrap_or(0.0);
    let se = sqrt(var / g as f64);
    let df = (g - 1) as f64;
    let (t, p) = t_from(grand, se, df);
    Ok(StatsSummary {
        mean: grand,
        ci_half_width: Some(student_t_quantile(0.975, df) * se),
        statistic: t,
        p_value: p,
        n: xs.len(),
        n_clusters: Some(g),
        df: Some(df),
        test_kind: TestKind::ClusterRobust,
    })
}

/// Two-sided one-sample t-test against zero.
pub fn one_sample_t(values: &[f64]) -> Result<StatsSummary, StatsError> {
    check_finite(values)?;
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let m = mean(values).unwrap_or(0.0);
    let var = sample_variance(values).unwrap_or(0.0);
    if var == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let se = sqrt(var / n as f64);
    let df = (n - 1) as f64;
    let t = m / se;
    Ok(StatsSummary {
        mean: m,
        ci_half_width: Some(student_t_quantile(0.975, df) * se),
        statistic: t,
        p_value: student_t_two_sided_p(t, df),
        n,
        n_clusters: None,
        df: Some(df),
        test_kind: TestKind::OneSampleT,
    })
}

/// One-sample t-test on `a − b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<StatsSummary, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().all(|d| *d == 0.0) && diffs.len() >= 2 {
        return Ok(StatsSummary {
            mean: 0.0,
            ci_half_width: Some(0.0),
            statistic: 0.0,
            p_value: 1.0,
            n: diffs.len(),
            n_clusters: None,
            df: Some((diffs.len() - 1) as f64),
            test_kind: TestKind::PairedT,
        });
    }
    let mut s = one_sample_t(&diffs)?;
    s.test_kind = TestKind::PairedT;
    Ok(s)
}

/// Exact binomial test, two-sided by doubling the smaller tail, capped at 1.
pub fn exact_binomial_two_sided(k: u64, n: u64, p0: f64) -> Result<StatsSummary, StatsError> {
    if k > n {
        return Err(StatsError::BadCount { k, n });
    }
    if n == 0 {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let (lower, upper) = binomial_tails(k, n, p0);
    let p = (2.0 * lower.min(upper)).min(1.0);
    Ok(StatsSummary {
        mean: k as f64 / n as f64,
        ci_half_width: None,
        statistic: k as f64,
        p_value: p,
        n: n as usize,
        n_clusters: None,
        df: None,
        test_kind: TestKind::ExactBinomial,
    })
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    let mx = mean(x).unwrap_or(0.0);
    let my = mean(y).unwrap_or(0.0);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Post-training change for one model family, oriented toward a target
/// country, with the sign that counts as maker-aligned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MakerShift {
    pub family_id: String,
    pub delta: f64,
    pub maker_sign: i8,
    pub aligned: bool,
}

impl MakerShift {
    /// `maker_sign` is +1 when the maker shares the target country's bloc.
    pub fn new(family_id: impl Into<String>, delta: f64, maker: Bloc, target: Bloc) -> Self {
        let maker_sign: i8 = if maker == target { 1 } else { -1 };
        MakerShift {
            family_id: family_id.into(),
            delta,
            maker_sign,
            aligned: delta * f64::from(maker_sign) > 0.0,
        }
    }

    pub fn signed_magnitude(&self) -> f64 {
        self.delta * f64::from(self.maker_sign)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MakerTests {
    pub binomial: StatsSummary,
    pub signed_magnitude: StatsSummary,
}

/// Binomial test on the aligned count and a one-sample t-test on `Δ · s`.
pub fn maker_direction_tests(shifts: &[MakerShift]) -> Result<MakerTests, StatsError> {
    if shifts.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: shifts.len() });
    }
    Ok(MakerTests {
        binomial: maker_binomial(shifts)?,
        signed_magnitude: one_sample_t(&shifts.iter().map(MakerShift::signed_magnitude).collect::<Vec<_>>())?,
    })
}

/// Binomial half of [`maker_direction_tests`], usable when the t-test is undefined.
pub fn maker_binomial(shifts: &[MakerShift]) -> Result<StatsSummary, StatsError> {
    let aligned = shifts.iter().filter(|s| s.aligned).count() as u64;
    exact_binomial_two_sided(aligned, shifts.len() as u64, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn binomial_reference_values() {
        assert_eq!(exact_binomial_two_sided(6, 7, 0.5).unwrap().p_value, 0.125);
        assert_eq!(exact_binomial_two_sided(5, 7, 0.5).unwrap().p_value, 0.453125);
        assert_eq!(exact_binomial_two_sided(5, 10, 0.5).unwrap().p_value, 1.0);
        assert!(exact_binomial_two_sided(8, 7, 0.5).is_err());
    }

    #[test]
    fn binomial_symmetry_small() {
        for n in 1..=30u64 {
            for k in 0..=n {
                let a = exact_binomial_two_sided(k, n, 0.5).unwrap().p_value;
                let b = exact_binomial_two_sided(n - k, n, 0.5).unwrap().p_value;
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn two_cluster_hand_value() {
        let v = [(0, 0.0), (0, 0.0), (1, 2.0), (1, 2.0)];
        let s = cluster_robust_summary(&v).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.ci_half_width.unwrap() - 12.706_204_736_432_095).abs() < 1e-9);
        assert_eq!(s.n_clusters, Some(2));
    }

    #[test]
    fn cluster_constant_values() {
        let v: Vec<(u8, f64)> = (0..26).map(|i| ((i % 13) as u8, 0.75)).collect();
        let s = cluster_robust_summary(&v).unwrap();
        assert_eq!(s.mean, 0.75);
        assert_eq!(s.ci_half_width, Some(0.0));
        assert_eq!(s.p_value, 0.0);
        assert!(matches!(
            cluster_robust_summary(&[(0, 1.0), (0, 2.0)]),
            Err(StatsError::SingleCluster)
        ));
    }

    #[test]
    fn singleton_clusters_match_one_sample() {
        let xs = [0.3, -1.2, 2.2, 0.9, 1.4];
        let c: Vec<(usize, f64)> = xs.iter().copied().enumerate().collect();
        let a = cluster_robust_summary(&c).unwrap();
        let b = one_sample_t(&xs).unwrap();
        assert!((a.ci_half_width.unwrap() - b.ci_half_width.unwrap()).abs() < 1e-12);
        assert!((a.p_value - b.p_value).abs() < 1e-12);
    }

    #[test]
    fn t_test_maker_fixture() {
        // signed magnitudes whose mean and sd reproduce t = 2.78 at n = 7
        let v = [0.72, 0.77, 2.04, 3.06, 1.36, 0.42, -0.25];
        let s = one_sample_t(&v).unwrap();
        assert!((s.mean - 1.16).abs() < 1e-12);
        assert!((s.statistic - 2.78).abs() < 0.005);
        assert!((s.p_value - 0.032).abs() < 0.001);
    }

    #[test]
    fn t_test_degenerate_inputs() {
        let s = one_sample_t(&[-1.0, 1.0, -2.0, 2.0]).unwrap();
        assert_eq!(s.statistic, 0.0);
        assert!((s.p_value - 1.0).abs() < 1e-15);
        assert_eq!(one_sample_t(&[2.0, 2.0]), Err(StatsError::ZeroVariance));
        assert!(matches!(one_sample_t(&[1.0]), Err(StatsError::TooFew { .. })));
        let p = paired_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((p.statistic, p.p_value), (0.0, 1.0));
    }

    #[test]
    fn paired_language_shift_consistency() {
        let post = [2.64, 0.69, 0.61, -0.99, -0.47, 0.88, 0.25];
        let base = [0.60, 0.06, 0.13, 0.13, 0.32, 0.22, 0.81];
        let s = paired_t(&post, &base).unwrap();
        assert!((s.mean - 0.20).abs() < 0.02);
        assert!((s.p_value - 0.66).abs() < 0.05);
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[3.0; 4]), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn maker_tests() {
        let deltas = [0.72, 0.77, 2.04, -3.06, -1.36, -0.42, 0.25];
        let makers = [
            Bloc::Western,
            Bloc::Western,
            Bloc::Western,
            Bloc::Chinese,
            Bloc::Chinese,
            Bloc::Chinese,
            Bloc::Chinese,
        ];
        // target = chinese; western makers are aligned when Δ < 0
        let shifts: Vec<MakerShift> = deltas
            .iter()
            .zip(makers)
            .enumerate()
            .map(|(i, (d, m))| MakerShift::new(alloc::format!("f{i}"), -d, m, Bloc::Chinese))
            .collect();
        let aligned = shifts.iter().filter(|s| s.aligned).count();
        assert_eq!(aligned, 6);
        let t = maker_direction_tests(&shifts).unwrap();
        assert_eq!(t.binomial.p_value, 0.125);
        assert!((t.signed_magnitude.mean - 1.16).abs() < 1e-12);
        assert!((t.signed_magnitude.p_value - 0.032).abs() < 0.001);

        let equal = vec![MakerShift::new("a", 1.0, Bloc::Chinese, Bloc::Chinese); 3];
        assert_eq!(maker_direction_tests(&equal), Err(StatsError::ZeroVariance));
        assert_eq!(maker_binomial(&equal).unwrap().p_value, 0.25);
    }
}
