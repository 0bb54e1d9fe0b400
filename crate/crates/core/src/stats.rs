//! Goodness-of-fit tools used by the verification harness and tests.

use crate::dist::chi2_sf;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test of `samples` against `cdf`.
///
/// The p-value uses the asymptotic Kolmogorov law with Stephens' finite-sample
/// adjustment `λ = (√n + 0.12 + 0.11/√n) D`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    if samples.is_empty() {
        return Err(invalid("KS test needs at least one sample"));
    }
    let mut xs = samples.to_vec();
    if xs.iter().any(|x| x.is_nan()) {
        return Err(invalid("KS test samples contain NaN"));
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok(TestResult { statistic: d, p_value: kolmogorov_sf(lambda) })
}

/// KS test against U(0, 1).
pub fn ks_uniform(samples: &[f64]) -> Result<TestResult> {
    ks_test(samples, |x| x.clamp(0.0, 1.0))
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson χ² goodness of fit of `observed` counts against cell probabilities.
/// Cells with expected count below 5 are pooled into one cell.
pub fn chi2_gof(observed: &[u64], probs: &[f64]) -> Result<TestResult> {
    if observed.len() != probs.len() || observed.is_empty() {
        return Err(invalid("observed counts and probabilities must have equal nonzero length"));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(invalid("no observations"));
    }
    if observed.iter().zip(probs).any(|(&o, &p)| o > 0 && p <= 0.0) {
        return Ok(TestResult { statistic: f64::INFINITY, p_value: 0.0 });
    }
    let n = total as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * n;
        if e < 5.0 {
            pooled_o += o as f64;
            pooled_e += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled_e > 0.0 {
        stat += (pooled_o - pooled_e).powi(2) / pooled_e;
        cells += 1;
    }
    if cells < 2 {
        return Ok(TestResult { statistic: stat, p_value: 1.0 });
    }
    Ok(TestResult { statistic: stat, p_value: chi2_sf((cells - 1) as f64, stat) })
}

/// Total-variation distance between empirical counts and probabilities.
pub fn total_variation(observed: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    0.5 * observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| (o as f64 / n as f64 - p).abs())
        .sum::<f64>()
}

/// Dvoretzky–Kiefer–Wolfowitz band half-width at confidence `1 − alpha`.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Standard deviation of an empirical proportion with success probability `p`.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kolmogorov_reference_points() {
        // P(K > 1.3581) ≈ 0.05, P(K > 1.6276) ≈ 0.01.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 2e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_accepts_uniform_and_rejects_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        assert!(ks_uniform(&u).unwrap().p_value > 0.001);
        let skew: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&skew).unwrap().p_value < 1e-6);
    }

    #[test]
    fn chi2_gof_detects_mismatch() {
        assert!(chi2_gof(&[250, 250, 250, 250], &[0.25; 4]).unwrap().p_value > 0.99);
        assert!(chi2_gof(&[400, 200, 200, 200], &[0.25; 4]).unwrap().p_value < 1e-6);
        assert_eq!(chi2_gof(&[1, 0], &[0.0, 1.0]).unwrap().p_value, 0.0);
    }

    #[test]
    fn tv_is_half_l1() {
        assert!((total_variation(&[3, 1], &[0.5, 0.5]) - 0.25).abs() < 1e-15);
    }
}
