//! Scalar activations and their derivatives.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Exact GELU, `x * Phi(x)` with `Phi` the standard normal CDF.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax restricted to positions where `mask` is true; masked positions get weight 0.
///
/// Returns `None` when no position is unmasked.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Option<Vec<f64>> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series for erf, independent of libm.
    fn erf_series(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 {
            sum += term / (2.0 * n + 1.0);
            n += 1.0;
            term *= -x * x / n;
        }
        2.0 / PI.sqrt() * sum
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        let oracle = 1.0 * 0.5 * (1.0 + erf_series(FRAC_1_SQRT_2));
        assert!((gelu(1.0) - oracle).abs() < 1e-12);
        assert!((gelu(1.0) - 0.841345).abs() < 1e-6);
        assert!(gelu(-10.0).abs() < 1e-8);
        assert!((gelu(10.0) - 10.0).abs() < 1e-8);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -1.2, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - numeric).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 1000.0 + 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let p = masked_softmax(&[0.0, 0.0, 5.0, 5.0], &[true, true, false, false]).unwrap();
        assert_eq!(p, vec![0.5, 0.5, 0.0, 0.0]);
        assert!(masked_softmax(&[1.0], &[false]).is_none());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0).is_finite());
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
    }
}
