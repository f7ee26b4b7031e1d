#![allow(dead_code)]

use std::sync::Arc;

use jsdwatch::cohort::{build_reference, BuildOptions, HourlyMatrix};
use jsdwatch::reference::ReferenceModel;

/// Standard normal quantiles at evenly spaced probabilities: a deterministic
/// stand-in for a large N(mean, sd) sample.
pub fn normal_like(n: usize, mean: f64, sd: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let p = (i as f64 + 0.5) / n as f64;
            mean + sd * probit(p)
        })
        .collect()
}

/// Inverse normal CDF, Acklam's rational approximation (relative error ~1e-9).
#[allow(clippy::excessive_precision)]
pub fn probit(p: f64) -> f64 {
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Reference with one column per feature, each filled from `samples`.
pub fn reference_from_columns(columns: &[(&str, Vec<f64>)]) -> Arc<ReferenceModel> {
    let n = columns[0].1.len();
    let features: Vec<String> = columns.iter().map(|(f, _)| f.to_string()).collect();
    // spread the pooled samples over patients of 48 hours each
    let per = 48;
    let matrices: Vec<HourlyMatrix> = (0..n / per)
        .map(|p| {
            let cells = (0..per)
                .map(|h| columns.iter().map(|(_, v)| Some(v[p * per + h])).collect())
                .collect();
            HourlyMatrix::new(format!("c{p}"), features.clone(), cells).unwrap()
        })
        .collect();
    Arc::new(build_reference(&matrices, &BuildOptions::default()).unwrap())
}

/// Gaussian KDE evaluated directly (no grid) at `x`.
pub fn kde_at(samples: &[f64], h: f64, x: f64) -> f64 {
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>() * norm
}

/// Jensen-Shannon divergence in bits of two densities given as closures,
/// by composite Simpson integration over `[lo, hi]`.
pub fn jsd_oracle(p: impl Fn(f64) -> f64, q: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    let ps: Vec<f64> = xs.iter().map(|&x| p(x)).collect();
    let qs: Vec<f64> = xs.iter().map(|&x| q(x)).collect();
    let zp = simpson(&ps, h);
    let zq = simpson(&qs, h);
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m.max(1e-300)).log2() } else { 0.0 };
    let f: Vec<f64> = ps
        .iter()
        .zip(&qs)
        .map(|(a, b)| {
            let (a, b) = (a / zp, b / zq);
            let m = 0.5 * (a + b);
            0.5 * term(a, m) + 0.5 * term(b, m)
        })
        .collect();
    simpson(&f, h)
}

fn simpson(ys: &[f64], h: f64) -> f64 {
    let n = ys.len() - 1;
    let mut s = ys[0] + ys[n];
    for (i, y) in ys.iter().enumerate().take(n).skip(1) {
        s += y * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}
