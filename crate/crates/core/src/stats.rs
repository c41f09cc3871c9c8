//! Accuracy summaries: binomial confidence intervals, exact tests against a
//! chance baseline, and correlation between result columns.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Confidence-interval construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    #[default]
    Wilson,
    /// Exact interval from beta quantiles, kept for audits.
    ClopperPearson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub successes: u64,
    pub n: u64,
    pub proportion: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided exact binomial p-value against a 0.5 baseline.
    pub p_value: f64,
}

impl AccuracySummary {
    pub fn from_counts(successes: u64, n: u64, level: f64, method: CiMethod) -> Result<Self> {
        check_counts(successes, n)?;
        let (ci_low, ci_high) = match method {
            CiMethod::Wilson => wilson_ci(successes, n, level)?,
            CiMethod::ClopperPearson => clopper_pearson_ci(successes, n, level)?,
        };
        Ok(AccuracySummary {
            successes,
            n,
            proportion: successes as f64 / n as f64,
            ci_low,
            ci_high,
            p_value: exact_binomial_test(successes, n, 0.5)?,
        })
    }

    pub fn from_flags(flags: &[bool]) -> Result<Self> {
        let k = flags.iter().filter(|f| **f).count() as u64;
        Self::from_counts(k, flags.len() as u64, 0.95, CiMethod::Wilson)
    }
}

pub fn proportion(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::Counts("proportion of an empty list".into()));
    }
    Ok(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
}

fn check_counts(successes: u64, n: u64) -> Result<()> {
    if n == 0 || successes > n {
        return Err(Error::Counts(format!("{successes} successes out of {n}")));
    }
    Ok(())
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Counts(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(())
}

/// Two-sided standard-normal quantile for a confidence level.
pub fn z_for_level(level: f64) -> Result<f64> {
    check_level(level)?;
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Wilson score interval, clipped to [0, 1].
pub fn wilson_ci(successes: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    check_counts(successes, n)?;
    let z = z_for_level(level)?;
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let low = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let high = if successes == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok((low, high))
}

pub fn clopper_pearson_ci(successes: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    check_counts(successes, n)?;
    check_level(level)?;
    let alpha = 1.0 - level;
    let (k, n) = (successes as f64, n as f64);
    let low = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0)
            .map_err(|e| Error::Counts(e.to_string()))?
            .inverse_cdf(alpha / 2.0)
    };
    let high = if successes as f64 == n {
        1.0
    } else {
        Beta::new(k + 1.0, n - k)
            .map_err(|e| Error::Counts(e.to_string()))?
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    Ok((low, high))
}

/// Log binomial pmf for every outcome `0..=n`.
fn log_pmf_table(n: u64, p: f64) -> Vec<f64> {
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_choose = 0.0;
    let mut out = Vec::with_capacity(n as usize + 1);
    for j in 0..=n {
        out.push(log_choose + j as f64 * lp + (n - j) as f64 * lq);
        if j < n {
            log_choose += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
        }
    }
    out
}

/// Exact two-sided binomial test: total null probability of outcomes no more
/// likely than the observed one.
pub fn exact_binomial_test(successes: u64, n: u64, null_p: f64) -> Result<f64> {
    check_counts(successes, n)?;
    if !(null_p > 0.0 && null_p < 1.0) {
        return Err(Error::Counts(format!("null probability {null_p} outside (0, 1)")));
    }
    let table = log_pmf_table(n, null_p);
    let observed = table[successes as usize];
    // Relative slack so that exact ties survive rounding in the pmf recurrence.
    let cutoff = observed + 1e-7_f64.ln_1p();
    let p: f64 = table
        .iter()
        .filter(|lp| **lp <= cutoff)
        .map(|lp| lp.exp())
        .sum();
    Ok(p.min(1.0))
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::Input("correlation needs at least 3 points".into()));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Input("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One-based ranks; tied values share the mean of their positions.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson on mid-ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&mid_ranks(xs), &mid_ranks(ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use num_bigint::ToBigUint;
    use proptest::prelude::*;

    fn choose(n: u64, k: u64) -> BigUint {
        let mut c = 1u32.to_biguint().unwrap();
        for i in 0..k {
            c = c * (n - i) / (i + 1);
        }
        c
    }

    /// Brute-force exact p-value at p = 0.5 with integer pmf numerators.
    fn oracle_p(k: u64, n: u64) -> f64 {
        let observed = choose(n, k);
        let mut total = BigUint::from(0u32);
        for j in 0..=n {
            let c = choose(n, j);
            if c <= observed {
                total += c;
            }
        }
        let num: f64 = total.to_string().parse().unwrap();
        (num * 2f64.powi(-(n as i32))).min(1.0)
    }

    #[test]
    fn proportion_examples() {
        let mut flags = vec![true; 164];
        flags.extend(vec![false; 36]);
        assert!((proportion(&flags).unwrap() - 0.82).abs() < 1e-15);
        assert_eq!(proportion(&[true, true]).unwrap(), 1.0);
        assert!(proportion(&[]).is_err());
    }

    #[test]
    fn wilson_closed_form() {
        // Closed form with z = 1.95996 at p = 0.5, n = 200.
        let z: f64 = 1.95996;
        let n = 200.0;
        let center = (0.5 + z * z / (2.0 * n)) / (1.0 + z * z / n);
        let half = z * (0.25 / n + z * z / (4.0 * n * n)).sqrt() / (1.0 + z * z / n);
        let (lo, hi) = wilson_ci(100, 200, 0.95).unwrap();
        assert!((lo - (center - half)).abs() < 1e-5);
        assert!((hi - (center + half)).abs() < 1e-5);
        assert!((lo - 0.4314).abs() < 1e-3 && (hi - 0.5686).abs() < 1e-3);
    }

    #[test]
    fn wilson_boundaries() {
        for n in [1, 7, 200] {
            assert_eq!(wilson_ci(0, n, 0.95).unwrap().0, 0.0);
            assert_eq!(wilson_ci(n, n, 0.95).unwrap().1, 1.0);
        }
        assert!(wilson_ci(3, 2, 0.95).is_err());
        assert!(wilson_ci(0, 0, 0.95).is_err());
        assert!(wilson_ci(1, 2, 1.5).is_err());
    }

    #[test]
    fn clopper_pearson_brackets_wilson_at_half() {
        let (lo, hi) = clopper_pearson_ci(100, 200, 0.95).unwrap();
        let (wl, wh) = wilson_ci(100, 200, 0.95).unwrap();
        assert!(lo < wl && hi > wh);
        assert!((lo - 0.4287).abs() < 1e-3, "{lo}");
        assert_eq!(clopper_pearson_ci(0, 10, 0.95).unwrap().0, 0.0);
        assert_eq!(clopper_pearson_ci(10, 10, 0.95).unwrap().1, 1.0);
    }

    #[test]
    fn exact_test_examples() {
        let p = exact_binomial_test(200, 200, 0.5).unwrap();
        assert!((p / oracle_p(200, 200) - 1.0).abs() < 1e-12);
        assert!((p - 1.2446e-60).abs() < 1e-63, "{p:e}");
        assert_eq!(exact_binomial_test(100, 200, 0.5).unwrap(), 1.0);
        assert_eq!(exact_binomial_test(0, 1, 0.5).unwrap(), 1.0);
        assert!(exact_binomial_test(5, 4, 0.5).is_err());
    }

    #[test]
    fn exact_test_matches_brute_force_small_grid() {
        for n in 1..=40 {
            for k in 0..=n {
                let got = exact_binomial_test(k, n, 0.5).unwrap();
                assert!((got - oracle_p(k, n)).abs() < 1e-12, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn uneven_null_is_supported() {
        // pmf = (0.01, 0.18, 0.81); observing k = 1 sums the first two.
        let p = exact_binomial_test(1, 2, 0.9).unwrap();
        assert!((p - 0.19).abs() < 1e-12);
    }

    #[test]
    fn correlations() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), -0.5);
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert_eq!(mid_ranks(&[2.0, 1.0, 2.0, 5.0]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn summary_invariants() {
        let s = AccuracySummary::from_counts(164, 200, 0.95, CiMethod::Wilson).unwrap();
        assert!(s.ci_low <= s.proportion && s.proportion <= s.ci_high);
        assert!(s.p_value < 1e-3);
        let s = AccuracySummary::from_flags(&[true]).unwrap();
        assert_eq!((s.proportion, s.p_value), (1.0, 1.0));
    }

    proptest! {
        #[test]
        fn wilson_contains_point_estimate(n in 1u64..2000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).round() as u64;
            let (lo, hi) = wilson_ci(k, n, 0.95).unwrap();
            let p = k as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        }

        #[test]
        fn wilson_narrows_with_n(n in 1u64..500, num in 0u64..=4) {
            // Same proportion num/4 at sample sizes 4n and 8n.
            let (l1, h1) = wilson_ci(num * n, 4 * n, 0.95).unwrap();
            let (l2, h2) = wilson_ci(2 * num * n, 8 * n, 0.95).unwrap();
            prop_assert!(h2 - l2 <= h1 - l1 + 1e-15);
        }

        #[test]
        fn exact_test_symmetric(n in 1u64..500, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as u64;
            let a = exact_binomial_test(k, n, 0.5).unwrap();
            let b = exact_binomial_test(n - k, n, 0.5).unwrap();
            prop_assert!(a > 0.0 && a <= 1.0);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn spearman_monotone_invariance(xs in prop::collection::vec(-100.0f64..100.0, 3..20),
                                         ys in prop::collection::vec(-100.0f64..100.0, 3..20)) {
            let n = xs.len().min(ys.len());
            let (xs, ys) = (&xs[..n], &ys[..n]);
            prop_assume!(xs.iter().any(|x| *x != xs[0]) && ys.iter().any(|y| *y != ys[0]));
            let base = spearman(xs, ys).unwrap();
            let tx: Vec<f64> = xs.iter().map(|x| x.exp().atan() + 3.0 * x).collect();
            let ty: Vec<f64> = ys.iter().map(|y| -(-y).exp()).collect();
            prop_assert!((spearman(&tx, &ty).unwrap() - base).abs() < 1e-12);
        }
    }
}
