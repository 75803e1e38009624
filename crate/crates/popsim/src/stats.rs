//! Statistical checks used to verify that engines sample the laws they claim.
//!
//! These are the goodness-of-fit and equivalence tests the test suites lean
//! on: chi-square against an exact pmf, two-sample chi-square homogeneity
//! between engines, Kolmogorov–Smirnov statistics, total variation distance,
//! and a log-log slope fit for runtime scaling.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Survival function of the chi-square distribution: `P(X > stat)` with `df`
/// degrees of freedom.
pub fn chi_square_p_value(stat: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df).expect("positive df");
    1.0 - dist.cdf(stat)
}

/// Chi-square goodness-of-fit test of observed counts against expected counts.
///
/// Bins with expected count below `min_expected` are pooled with their
/// neighbours so the chi-square approximation stays valid. Returns
/// `(statistic, p_value)`.
pub fn chi_square_gof(observed: &[u64], expected: &[f64], min_expected: f64) -> (f64, f64) {
    assert_eq!(observed.len(), expected.len());
    let merged = merge_bins(observed, expected, min_expected);
    let mut stat = 0.0;
    for &(o, e) in &merged {
        if e > 0.0 {
            let d = o as f64 - e;
            stat += d * d / e;
        }
    }
    let df = (merged.len().saturating_sub(1)) as f64;
    (stat, chi_square_p_value(stat, df))
}

fn merge_bins(observed: &[u64], expected: &[f64], min_expected: f64) -> Vec<(u64, f64)> {
    let mut merged: Vec<(u64, f64)> = Vec::new();
    let mut acc_o = 0u64;
    let mut acc_e = 0.0f64;
    for (&o, &e) in observed.iter().zip(expected) {
        acc_o += o;
        acc_e += e;
        if acc_e >= min_expected {
            merged.push((acc_o, acc_e));
            acc_o = 0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0 {
        if let Some(last) = merged.last_mut() {
            last.0 += acc_o;
            last.1 += acc_e;
        } else {
            merged.push((acc_o, acc_e));
        }
    }
    merged
}

/// Two-sample chi-square homogeneity test over aligned histograms.
///
/// Tests whether `a` and `b` were drawn from the same distribution. Columns
/// whose pooled expected count falls below `min_expected` are merged.
/// Returns `(statistic, p_value)`.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], min_expected: f64) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let total_a: u64 = a.iter().sum();
    let total_b: u64 = b.iter().sum();
    let n = (total_a + total_b) as f64;
    assert!(n > 0.0, "empty histograms");

    // Merge columns until the pooled column total is large enough that both
    // expected cells clear min_expected.
    let frac_min = (total_a.min(total_b) as f64) / n;
    let col_threshold = min_expected / frac_min;
    let mut cols: Vec<(u64, u64)> = Vec::new();
    let mut acc = (0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        acc.0 += x;
        acc.1 += y;
        if (acc.0 + acc.1) as f64 >= col_threshold {
            cols.push(acc);
            acc = (0, 0);
        }
    }
    if acc.0 + acc.1 > 0 {
        if let Some(last) = cols.last_mut() {
            last.0 += acc.0;
            last.1 += acc.1;
        } else {
            cols.push(acc);
        }
    }

    let mut stat = 0.0;
    for &(x, y) in &cols {
        let col = (x + y) as f64;
        let e_a = col * total_a as f64 / n;
        let e_b = col * total_b as f64 / n;
        if e_a > 0.0 {
            let d = x as f64 - e_a;
            stat += d * d / e_a;
        }
        if e_b > 0.0 {
            let d = y as f64 - e_b;
            stat += d * d / e_b;
        }
    }
    let df = (cols.len().saturating_sub(1)) as f64;
    (stat, chi_square_p_value(stat, df))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|` for real samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample KS statistic for an integer-valued histogram against an exact
/// CDF. `hist[v]` is the observed count of value `v`; `cdf(v)` must return
/// `P(X <= v)`.
pub fn ks_hist_vs_cdf(hist: &[u64], cdf: impl Fn(u64) -> f64) -> f64 {
    let total: u64 = hist.iter().sum();
    assert!(total > 0);
    let mut cum = 0u64;
    let mut d: f64 = 0.0;
    for (v, &c) in hist.iter().enumerate() {
        cum += c;
        d = d.max((cum as f64 / total as f64 - cdf(v as u64)).abs());
    }
    d
}

/// Total variation distance between two empirical histograms.
pub fn total_variation(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ta: u64 = a.iter().sum();
    let tb: u64 = b.iter().sum();
    assert!(ta > 0 && tb > 0);
    0.5 * a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / ta as f64 - y as f64 / tb as f64).abs())
        .sum::<f64>()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    assert!(points.len() >= 2);
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
