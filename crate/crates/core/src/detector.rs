//! Watermark detection.
//!
//! Every detector works on the set of unique n-grams of a text (prompt length
//! zero, set semantics) and the PRF values `R_t` they hash to. The score is
//! oriented so that larger means more likely watermarked; where a p-value is
//! defined it is computed from the upper tail directly rather than as
//! `1 - score`, and its natural log is reported as well so that ranking
//! survives p-values below `f64` range.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::special::{ln_reg_gamma_pair, reg_gamma_p};
use crate::dist::{reg_gamma_quantile, DensityEstimate, ScoreDistribution};
use crate::error::{invalid, Error, Result};
use crate::prf::{extract_ngrams, hash_ngram, prf_draw, SecretKey, TokenId};

/// Token-level survival values are clamped below at this before taking logs.
pub const FISHER_P_FLOOR: f64 = 1e-300;
/// Densities are floored at this before taking logs in the KDE likelihood ratio.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Nudge applied to uniform values of exactly 0 or 1 before log transforms.
pub const OPEN_INTERVAL_NUDGE: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sum,
    Fisher,
    LrtGamma,
    LrtKde,
    Recursive,
    Aaronson,
    AaronsonFisher,
    AaronsonSum,
    Kirchenbauer,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Sum,
        Method::Fisher,
        Method::LrtGamma,
        Method::LrtKde,
        Method::Recursive,
        Method::Aaronson,
        Method::AaronsonFisher,
        Method::AaronsonSum,
        Method::Kirchenbauer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sum => "sum",
            Method::Fisher => "fisher",
            Method::LrtGamma => "lrt_gamma",
            Method::LrtKde => "lrt_kde",
            Method::Recursive => "recursive",
            Method::Aaronson => "aaronson",
            Method::AaronsonFisher => "aaronson_fisher",
            Method::AaronsonSum => "aaronson_sum",
            Method::Kirchenbauer => "kirchenbauer",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| invalid(format!("unknown detection method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPValue {
    pub key_index: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: Method,
    /// Higher means more likely watermarked.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    /// `ln p_value`, accurate where `p_value` itself underflows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_p_value: Option<f64>,
    pub t_unique: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_key: Option<Vec<KeyPValue>>,
}

impl DetectionReport {
    pub(crate) fn with_p(method: Method, score: f64, ln_p: f64, t_unique: usize) -> Self {
        Self { method, score, p_value: Some(ln_p.exp()), ln_p_value: Some(ln_p), t_unique, per_key: None }
    }

    pub(crate) fn score_only(method: Method, score: f64, t_unique: usize) -> Self {
        Self { method, score, p_value: None, ln_p_value: None, t_unique, per_key: None }
    }

    /// Statistic for ranking texts of mixed lengths: `-ln p` when a p-value
    /// exists, the raw score otherwise.
    pub fn ranking_statistic(&self) -> f64 {
        match self.ln_p_value {
            Some(lp) => -lp,
            None => self.score,
        }
    }
}

/// Unique n-grams of `tokens` in order of first occurrence.
pub fn unique_ngrams(tokens: &[TokenId], n: usize) -> Vec<&[TokenId]> {
    let mut seen = HashSet::new();
    extract_ngrams(tokens, n, 0).into_iter().filter(|w| seen.insert(*w)).collect()
}

/// PRF values of the unique n-grams of `tokens` under `key`.
pub fn prf_values(dist: &ScoreDistribution, tokens: &[TokenId], key: SecretKey, n: usize) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::Degenerate("cannot detect on an empty token sequence".into()));
    }
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    Ok(unique_ngrams(tokens, n).into_iter().map(|w| prf_draw(dist, hash_ngram(key, w))).collect())
}

fn nonempty(draws: &[f64]) -> Result<u64> {
    if draws.is_empty() {
        return Err(Error::Degenerate("no PRF values to score".into()));
    }
    Ok(draws.len() as u64)
}

/// Sum test on given PRF values: score `F_T(Σ R)`, p-value `1 - F_T(Σ R)`.
pub fn sum_test(dist: &ScoreDistribution, draws: &[f64]) -> Result<DetectionReport> {
    let t = nonempty(draws)?;
    let total: f64 = draws.iter().sum();
    let (ln_cdf, ln_p) = dist.sum_ln_cdf_sf(t, total)?;
    let score = ln_cdf.exp();
    Ok(DetectionReport::with_p(Method::Sum, score, ln_p, draws.len()))
}

/// `ln` of the χ²₂ₜ upper tail at Fisher's statistic of the given log p-values.
fn fisher_ln_sf(ln_ps: &[f64]) -> (f64, f64) {
    let y: f64 = -2.0 * ln_ps.iter().sum::<f64>();
    let (lc, ls) = ln_reg_gamma_pair(ln_ps.len() as f64, 0.5 * y);
    (lc.exp(), ls)
}

/// Fisher test on given PRF values, combining token-level p-values `1 - F(R)`.
pub fn fisher_test(dist: &ScoreDistribution, draws: &[f64]) -> Result<DetectionReport> {
    nonempty(draws)?;
    let ln_ps: Vec<f64> = draws.iter().map(|&r| token_ln_p(dist, r)).collect();
    let (score, ln_p) = fisher_ln_sf(&ln_ps);
    Ok(DetectionReport::with_p(Method::Fisher, score, ln_p, draws.len()))
}

fn token_ln_p(dist: &ScoreDistribution, r: f64) -> f64 {
    let ln_sf = match dist {
        ScoreDistribution::Uniform01 => {
            let r = r.clamp(OPEN_INTERVAL_NUDGE, 1.0 - OPEN_INTERVAL_NUDGE);
            (-r).ln_1p()
        }
        _ => dist.ln_sf(r),
    };
    ln_sf.max(FISHER_P_FLOOR.ln())
}

/// Sum-based p-value detection.
pub fn detect(dist: &ScoreDistribution, tokens: &[TokenId], key: SecretKey, n: usize) -> Result<DetectionReport> {
    sum_test(dist, &prf_values(dist, tokens, key, n)?)
}

/// Fisher combination of token-level p-values.
pub fn detect_fisher(dist: &ScoreDistribution, tokens: &[TokenId], key: SecretKey, n: usize) -> Result<DetectionReport> {
    fisher_test(dist, &prf_values(dist, tokens, key, n)?)
}

/// Parameters of the exact likelihood-ratio test for `F = −Gamma(1/k, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaLrtParams {
    pub k: u32,
    pub m: u32,
    pub beta: f64,
}

impl GammaLrtParams {
    pub fn new(k: u32, m: u32, beta: f64) -> Result<Self> {
        let p = Self { k, m, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid("gamma LRT needs k, m >= 1 and finite beta > 0"));
        }
        Ok(())
    }

    pub fn dist(&self) -> ScoreDistribution {
        ScoreDistribution::NegGamma { k: self.k, beta: self.beta }
    }

    fn shape(&self, t_unique: usize) -> f64 {
        t_unique as f64 / self.k as f64
    }

    /// `s = (T/k) ln m + (m − 1) β Σ R`.
    pub fn statistic(&self, draws: &[f64]) -> f64 {
        let sum: f64 = draws.iter().sum();
        self.shape(draws.len()) * (self.m as f64).ln() + (self.m as f64 - 1.0) * self.beta * sum
    }

    /// Supremum of the statistic, `(T/k) ln m`.
    pub fn sup_statistic(&self, t_unique: usize) -> f64 {
        self.shape(t_unique) * (self.m as f64).ln()
    }

    /// `Q(t) = (T ln m / k − t) / ((m − 1) β)`, the bound on `−Σ R` implied by `s ≥ t`.
    pub fn q(&self, t_unique: usize, thresh: f64) -> f64 {
        (self.sup_statistic(t_unique) - thresh) / ((self.m as f64 - 1.0) * self.beta)
    }

    /// `P(s ≥ t)` under the null: Gamma(T/k, β) CDF at `Q(t)`.
    pub fn fpr(&self, t_unique: usize, thresh: f64) -> f64 {
        self.rate_at(t_unique, thresh, self.beta)
    }

    /// `P(s < t)` under the watermark: one minus the Gamma(T/k, mβ) CDF at `Q(t)`.
    pub fn fnr(&self, t_unique: usize, thresh: f64) -> f64 {
        1.0 - self.tpr(t_unique, thresh)
    }

    pub fn tpr(&self, t_unique: usize, thresh: f64) -> f64 {
        self.rate_at(t_unique, thresh, self.m as f64 * self.beta)
    }

    fn rate_at(&self, t_unique: usize, thresh: f64, rate: f64) -> f64 {
        if self.m == 1 {
            // The statistic is constant; reject everything at or below it.
            return if thresh <= self.sup_statistic(t_unique) { 1.0 } else { 0.0 };
        }
        let q = self.q(t_unique, thresh);
        if q <= 0.0 {
            return 0.0;
        }
        reg_gamma_p(self.shape(t_unique), rate * q)
    }

    /// Threshold `t` with `fpr(T, t) = alpha`.
    pub fn threshold_for_fpr(&self, t_unique: usize, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("target FPR must lie in (0, 1)"));
        }
        if self.m == 1 {
            return Err(Error::Degenerate("m = 1 gives a constant statistic".into()));
        }
        let q = reg_gamma_quantile(self.shape(t_unique), self.beta, alpha);
        Ok(self.sup_statistic(t_unique) - (self.m as f64 - 1.0) * self.beta * q)
    }

    /// LRT on given PRF values. The p-value is the null probability of a
    /// statistic at least as large, `fpr(T, s)`.
    pub fn test(&self, draws: &[f64]) -> Result<DetectionReport> {
        nonempty(draws)?;
        let s = self.statistic(draws);
        let ln_p = if self.m == 1 {
            0.0
        } else {
            let q = self.q(draws.len(), s).max(0.0);
            ln_reg_gamma_pair(self.shape(draws.len()), self.beta * q).0
        };
        Ok(DetectionReport::with_p(Method::LrtGamma, s, ln_p, draws.len()))
    }
}

/// Exact Gamma likelihood-ratio test. `dist` must be `NegGamma` with the
/// parameters' `k` and `β`.
pub fn detect_lrt_gamma(
    dist: &ScoreDistribution,
    params: &GammaLrtParams,
    tokens: &[TokenId],
    key: SecretKey,
    n: usize,
) -> Result<DetectionReport> {
    params.validate()?;
    if *dist != params.dist() {
        return Err(invalid(format!(
            "gamma LRT requires neg_gamma(k={}, beta={}), got {}",
            params.k,
            params.beta,
            dist.name()
        )));
    }
    params.test(&prf_values(dist, tokens, key, n)?)
}

pub const MIN_KDE_SAMPLES: usize = 1000;

/// Draw `n_samples` winner-first-elements: fill an `m × k` matrix with i.i.d.
/// draws from `dist`, keep the first entry of the row with the largest sum.
pub fn winner_first_elements(dist: &ScoreDistribution, k: usize, m: usize, n_samples: usize, rng_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut best = f64::NEG_INFINITY;
        let mut first = 0.0;
        for _ in 0..m {
            let row0 = draw(dist, &mut rng);
            let mut sum = row0;
            for _ in 1..k {
                sum += draw(dist, &mut rng);
            }
            if sum > best {
                best = sum;
                first = row0;
            }
        }
        out.push(first);
    }
    out
}

fn draw<R: Rng + ?Sized>(dist: &ScoreDistribution, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    match dist {
        ScoreDistribution::Uniform01 => u,
        _ => dist.inverse_cdf(u),
    }
}

/// KDE of the watermarked per-n-gram law `f₁`.
pub fn estimate_f1(dist: &ScoreDistribution, k: usize, m: usize, n_samples: usize, rng_seed: u64) -> Result<DensityEstimate> {
    if n_samples < MIN_KDE_SAMPLES {
        return Err(invalid(format!("density estimation needs at least {MIN_KDE_SAMPLES} samples")));
    }
    if k == 0 || m == 0 {
        return Err(invalid("k and m must be at least 1"));
    }
    DensityEstimate::fit(&winner_first_elements(dist, k, m, n_samples, rng_seed))
}

/// KDE of the null per-n-gram law `f₀` from plain i.i.d. draws.
pub fn estimate_f0(dist: &ScoreDistribution, n_samples: usize, rng_seed: u64) -> Result<DensityEstimate> {
    if n_samples < MIN_KDE_SAMPLES {
        return Err(invalid(format!("density estimation needs at least {MIN_KDE_SAMPLES} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let draws: Vec<f64> = (0..n_samples).map(|_| draw(dist, &mut rng)).collect();
    DensityEstimate::fit(&draws)
}

/// Estimated likelihood-ratio test on given PRF values. Score only.
pub fn kde_lrt_test(f0: &DensityEstimate, f1: &DensityEstimate, draws: &[f64]) -> Result<DetectionReport> {
    nonempty(draws)?;
    let score = draws
        .iter()
        .map(|&r| f1.eval(r).max(DENSITY_FLOOR).ln() - f0.eval(r).max(DENSITY_FLOOR).ln())
        .sum();
    Ok(DetectionReport::score_only(Method::LrtKde, score, draws.len()))
}

pub fn detect_lrt_kde(
    dist: &ScoreDistribution,
    f0: &DensityEstimate,
    f1: &DensityEstimate,
    tokens: &[TokenId],
    key: SecretKey,
    n: usize,
) -> Result<DetectionReport> {
    kde_lrt_test(f0, f1, &prf_values(dist, tokens, key, n)?)
}

/// Fisher combination of per-key sum p-values.
pub fn detect_recursive(
    dist: &ScoreDistribution,
    tokens: &[TokenId],
    keys: &[SecretKey],
    n: usize,
) -> Result<DetectionReport> {
    if keys.is_empty() {
        return Err(invalid("recursive detection needs at least one key"));
    }
    if keys.iter().collect::<HashSet<_>>().len() != keys.len() {
        return Err(invalid("keys must be pairwise distinct"));
    }
    let mut ln_ps = Vec::with_capacity(keys.len());
    let mut t_unique = 0;
    for &key in keys {
        let r = detect(dist, tokens, key, n)?;
        t_unique = r.t_unique;
        ln_ps.push(r.ln_p_value.expect("sum test has a p-value"));
    }
    recursive_combine(&ln_ps, t_unique)
}

/// Combine per-key log p-values; zeros are clamped to the smallest positive double.
pub fn recursive_combine(ln_ps: &[f64], t_unique: usize) -> Result<DetectionReport> {
    if ln_ps.is_empty() {
        return Err(invalid("nothing to combine"));
    }
    let floor = f64::MIN_POSITIVE.ln();
    let clamped: Vec<f64> = ln_ps.iter().map(|lp| lp.max(floor)).collect();
    let (score, ln_p) = fisher_ln_sf(&clamped);
    let mut report = DetectionReport::with_p(Method::Recursive, score, ln_p, t_unique);
    report.per_key = Some(
        clamped
            .iter()
            .enumerate()
            .map(|(key_index, lp)| KeyPValue { key_index, p_value: lp.exp() })
            .collect(),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::chi2_cdf;

    const U: ScoreDistribution = ScoreDistribution::Uniform01;

    #[test]
    fn dedup_semantics() {
        let r = detect(&U, &[7, 7, 7, 7], 1, 1).unwrap();
        assert_eq!(r.t_unique, 1);
        // [a], [a,a], [a,a] for n = 2: two unique windows.
        assert_eq!(detect(&U, &[7, 7, 7], 1, 2).unwrap().t_unique, 2);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(detect(&U, &[], 1, 4), Err(Error::Degenerate(_))));
    }

    #[test]
    fn p_is_complement_of_score() {
        let tokens: Vec<TokenId> = (0..60).map(|i| (i * 37 % 101) as TokenId).collect();
        for dist in [U, ScoreDistribution::StdNormal, ScoreDistribution::ChiSq2, ScoreDistribution::NegGamma { k: 3, beta: 1.0 }] {
            let r = detect(&dist, &tokens, 3, 4).unwrap();
            assert!((r.p_value.unwrap() - (1.0 - r.score)).abs() < 1e-12);
            let f = detect_fisher(&dist, &tokens, 3, 4).unwrap();
            assert!((f.p_value.unwrap() - (1.0 - f.score)).abs() < 1e-12);
        }
    }

    #[test]
    fn fisher_t1_matches_sum_for_uniform() {
        for r in [0.1, 0.5, 0.93] {
            let a = sum_test(&U, &[r]).unwrap();
            let b = fisher_test(&U, &[r]).unwrap();
            assert!((a.p_value.unwrap() - (1.0 - r)).abs() < 1e-14);
            assert!((b.p_value.unwrap() - (1.0 - r)).abs() < 1e-13);
        }
    }

    #[test]
    fn fisher_at_medians() {
        let b = fisher_test(&U, &[0.5]).unwrap();
        assert!((b.p_value.unwrap() - 0.5).abs() < 1e-14);
        let four = fisher_test(&U, &[0.5; 4]).unwrap();
        let want = 1.0 - chi2_cdf(8.0, 8.0 * 2f64.ln());
        assert!((four.p_value.unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn fisher_survives_exact_one() {
        let r = fisher_test(&U, &[1.0, 0.2]).unwrap();
        assert!(r.p_value.unwrap() > 0.0 && r.ln_p_value.unwrap().is_finite());
    }

    #[test]
    fn sum_score_is_monotone_in_each_draw() {
        let base = vec![0.2, 0.4, 0.6, 0.8, 0.3];
        let s0 = sum_test(&U, &base).unwrap().score;
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += 0.01;
            assert!(sum_test(&U, &up).unwrap().score > s0);
        }
    }

    #[test]
    fn detection_is_pure() {
        let tokens: Vec<TokenId> = (0..40).collect();
        let a = detect(&U, &tokens, 11, 4).unwrap();
        let b = detect(&U, &tokens, 11, 4).unwrap();
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }

    #[test]
    fn recursive_with_one_key_equals_sum() {
        let tokens: Vec<TokenId> = (0..40).map(|i| i % 13).collect();
        let a = detect(&U, &tokens, 5, 3).unwrap();
        let b = detect_recursive(&U, &tokens, &[5], 3).unwrap();
        assert!((a.score - b.score).abs() < 1e-12);
        assert_eq!(b.per_key.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn lrt_gamma_boundary_and_paper_point() {
        let p = GammaLrtParams::new(50, 64, 1.0).unwrap();
        assert_eq!(p.fpr(100, p.sup_statistic(100)), 0.0);
        let t = p.threshold_for_fpr(100, 0.01).unwrap();
        assert!((p.fpr(100, t) - 0.01).abs() < 1e-10);
        // Frozen from an independent evaluation of the closed form.
        assert!((p.tpr(100, t) - 0.9992193735089372).abs() < 1e-9);
    }

    #[test]
    fn lrt_gamma_rejects_wrong_family() {
        let p = GammaLrtParams::new(2, 4, 1.0).unwrap();
        assert!(detect_lrt_gamma(&U, &p, &[1, 2, 3], 1, 2).is_err());
        let ok = detect_lrt_gamma(&p.dist(), &p, &[1, 2, 3], 1, 2).unwrap();
        assert_eq!(ok.method, Method::LrtGamma);
    }

    #[test]
    fn method_parses() {
        assert_eq!("lrt-gamma".parse::<Method>().unwrap(), Method::LrtGamma);
        assert_eq!("aaronson_sum".parse::<Method>().unwrap(), Method::AaronsonSum);
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn kde_needs_enough_samples() {
        assert!(estimate_f1(&U, 1, 4, 10, 0).is_err());
    }

    #[test]
    fn kde_lrt_with_m1_is_centered() {
        let f0 = estimate_f0(&ScoreDistribution::StdNormal, 20_000, 1).unwrap();
        let f1 = estimate_f1(&ScoreDistribution::StdNormal, 3, 1, 20_000, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let draws: Vec<f64> = (0..20).map(|_| draw(&ScoreDistribution::StdNormal, &mut rng)).collect();
            total += kde_lrt_test(&f0, &f1, &draws).unwrap().score;
        }
        assert!((total / trials as f64).abs() < 0.05, "mean {}", total / trials as f64);
    }

    #[test]
    fn kde_f1_approaches_beta_m1() {
        // Uniform, k = 1: the winner is the max of m uniforms, density m x^(m-1).
        let m = 8;
        let f1 = estimate_f1(&U, 1, m, 50_000, 4).unwrap();
        let grid = 400;
        let mut l1 = 0.0;
        for i in 0..grid {
            let x = (i as f64 + 0.5) / grid as f64;
            let want = m as f64 * x.powi(m as i32 - 1);
            l1 += (f1.eval(x) - want).abs() / grid as f64;
        }
        assert!(l1 < 0.1, "L1 {l1}");
    }
}
