//! Small numerically stable helpers shared by the field, filter and learner.

use std::f64::consts::PI;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log(sum(exp(x)))`, returning `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log weights in place so that `exp` of them sums to one.
/// Returns the log normalizer that was subtracted.
pub fn log_normalize(log_w: &mut [f64]) -> f64 {
    let z = logsumexp(log_w);
    for v in log_w.iter_mut() {
        *v -= z;
    }
    z
}

/// Softmax of `values`.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    log_normalize(&mut out);
    out.iter_mut().for_each(|v| *v = v.exp());
    out
}

/// Divides by the sum. Returns `None` when the sum is not a positive finite number.
pub fn normalize(p: &mut [f64]) -> Option<()> {
    let s: f64 = p.iter().sum();
    if !(s.is_finite() && s > 0.0) {
        return None;
    }
    p.iter_mut().for_each(|v| *v /= s);
    Some(())
}

/// Log density of a univariate Gaussian.
pub fn ln_normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

/// KL(N(m1, diag v1) || N(m0, diag v0)).
pub fn kl_diag_gaussian(m1: &[f64], v1: &[f64], m0: &[f64], v0: &[f64]) -> f64 {
    let mut kl = 0.0;
    for j in 0..m1.len() {
        let d = m1[j] - m0[j];
        kl += v1[j] / v0[j] + d * d / v0[j] - 1.0 + (v0[j] / v1[j]).ln();
    }
    0.5 * kl
}

/// Differential entropy of a diagonal Gaussian.
pub fn entropy_diag_gaussian(var: &[f64]) -> f64 {
    var.iter().map(|v| 0.5 * (2.0 * PI * std::f64::consts::E * v).ln()).sum()
}

/// Log density of a diagonal Gaussian.
pub fn ln_diag_gaussian(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.len() {
        let d = x[j] - mean[j];
        acc += var[j].ln() + d * d / var[j];
    }
    -0.5 * (x.len() as f64 * LN_2PI + acc)
}
