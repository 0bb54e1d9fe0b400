//! End-to-end benchmark on mock samplers: paired watermarked and plain
//! corpora, optional corruption, scoring at several truncation lengths, and
//! per-length plus pooled ROC metrics.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attack::attack_replace;
use super::roc::{roc, DEFAULT_PAUC_FPR};
use super::trial_rng;
use crate::baselines::{aaronson_generate, aaronson_score, kirchenbauer_generate, kirchenbauer_score, AaronsonVariant, KirchenbauerConfig};
use crate::detector::{
    detect, detect_fisher, detect_lrt_gamma, detect_recursive, detect_lrt_kde, estimate_f0, estimate_f1, DetectionReport,
    GammaLrtParams, Method,
};
use crate::dist::{DensityEstimate, ScoreDistribution};
use crate::encoder::{generate_plain, watermark, WatermarkConfig, DEFAULT_FANOUT_BUDGET};
use crate::error::{invalid, Error, Result};
use crate::prf::{SecretKey, TokenId};
use crate::sampler::{NextTokenModel, SamplerSpec};
use crate::stats::binomial_sigma;

/// Samples used to fit each density of the KDE likelihood ratio.
pub const KDE_FIT_SAMPLES: usize = 20_000;
/// Score thresholds at which the pooled null FPR is reported.
pub const NULL_FPR_THRESHOLDS: [f64; 3] = [0.9, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    /// Flat scheme with the first key.
    Flat { m: usize },
    /// Recursive scheme with all keys, fan-out `m` per key.
    Recursive { m: usize },
    /// Aaronson's white-box scheme with the first key.
    Aaronson,
    /// Kirchenbauer's green-list scheme with the first key.
    Kirchenbauer { gamma: f64, delta: f64 },
}

impl Scheme {
    fn m(&self) -> usize {
        match self {
            Scheme::Flat { m } | Scheme::Recursive { m } => *m,
            _ => 1,
        }
    }
}

fn default_truncations() -> Vec<usize> {
    vec![25, 50, 75, 100]
}

fn default_detectors() -> Vec<Method> {
    vec![Method::Sum]
}

fn default_pauc() -> f64 {
    DEFAULT_PAUC_FPR
}

fn default_n() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Must be a mock backend; its seed is replaced per trial.
    pub sampler: SamplerSpec,
    pub scheme: Scheme,
    pub keys: Vec<SecretKey>,
    /// Draw new keys for every trial instead of reusing `keys`.
    #[serde(default)]
    pub fresh_keys: bool,
    #[serde(default)]
    pub dist: ScoreDistribution,
    #[serde(default = "default_n")]
    pub n: usize,
    pub k: usize,
    pub max_len: usize,
    pub trials: usize,
    /// Percentage of watermarked tokens replaced before scoring.
    #[serde(default)]
    pub attack_pct: f64,
    #[serde(default = "default_truncations")]
    pub truncations: Vec<usize>,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<Method>,
    #[serde(default = "default_pauc")]
    pub pauc_fpr: f64,
    #[serde(default)]
    pub prompt: Vec<TokenId>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Scenario {
    /// Dummy random LM over 100 tokens, flat scheme with `m = 64`.
    pub fn dummy_lm_flat() -> Self {
        Self {
            name: "dummy_lm_flat".into(),
            sampler: SamplerSpec::UniformMock { vocab_size: 100, rng_seed: 0 },
            scheme: Scheme::Flat { m: 64 },
            keys: vec![1],
            fresh_keys: false,
            dist: ScoreDistribution::Uniform01,
            n: 4,
            k: 20,
            max_len: 100,
            trials: 200,
            attack_pct: 0.0,
            truncations: vec![100],
            detectors: vec![Method::Sum],
            pauc_fpr: DEFAULT_PAUC_FPR,
            prompt: Vec::new(),
            rng_seed: 0,
        }
    }

    /// Same model, six keys with fan-out 2.
    pub fn dummy_lm_recursive() -> Self {
        Self {
            name: "dummy_lm_recursive".into(),
            scheme: Scheme::Recursive { m: 2 },
            keys: (1..=6).collect(),
            detectors: vec![Method::Recursive],
            ..Self::dummy_lm_flat()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sampler.is_mock() {
            return Err(Error::Unsupported("the benchmark needs a mock sampler".into()));
        }
        if self.keys.is_empty() {
            return Err(invalid("at least one key is required"));
        }
        if self.trials == 0 || self.max_len == 0 || self.k == 0 || self.n == 0 {
            return Err(invalid("trials, max_len, k and n must be at least 1"));
        }
        if self.truncations.is_empty() || self.truncations.contains(&0) {
            return Err(invalid("truncation lengths must be nonempty and positive"));
        }
        if self.detectors.is_empty() {
            return Err(invalid("no detectors selected"));
        }
        if !(0.0..=100.0).contains(&self.attack_pct) {
            return Err(invalid("attack percentage must lie in [0, 100]"));
        }
        if !(self.pauc_fpr > 0.0 && self.pauc_fpr <= 1.0) {
            return Err(invalid("pauc_fpr must lie in (0, 1]"));
        }
        match self.scheme {
            Scheme::Flat { m } | Scheme::Recursive { m } => {
                self.watermark_config(self.scheme_keys(&self.keys), 0)?.validate()?;
                if m == 0 {
                    return Err(invalid("m must be at least 1"));
                }
            }
            Scheme::Kirchenbauer { gamma, delta } => {
                self.kirchenbauer(gamma, delta, self.keys[0]).validate(self.vocab()?)?;
            }
            Scheme::Aaronson => {}
        }
        for d in &self.detectors {
            match d {
                Method::LrtGamma if !matches!(self.dist, ScoreDistribution::NegGamma { .. }) => {
                    return Err(invalid("lrt_gamma needs the neg_gamma distribution"));
                }
                Method::Kirchenbauer if !matches!(self.scheme, Scheme::Kirchenbauer { .. }) => {
                    return Err(invalid("the kirchenbauer detector needs the kirchenbauer scheme"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn vocab(&self) -> Result<usize> {
        Ok(self.sampler.build_mock()?.vocab_size())
    }

    fn scheme_keys(&self, keys: &[SecretKey]) -> Vec<SecretKey> {
        match self.scheme {
            Scheme::Recursive { .. } => keys.to_vec(),
            _ => vec![keys[0]],
        }
    }

    fn watermark_config(&self, keys: Vec<SecretKey>, rng_seed: u64) -> Result<WatermarkConfig> {
        let mut cfg = WatermarkConfig::recursive(self.dist, keys, self.scheme.m(), self.n, self.k, self.max_len);
        cfg.rng_seed = rng_seed;
        cfg.fanout_budget = DEFAULT_FANOUT_BUDGET;
        Ok(cfg)
    }

    fn kirchenbauer(&self, gamma: f64, delta: f64, key: SecretKey) -> KirchenbauerConfig {
        KirchenbauerConfig { gamma, delta, n: self.n, key }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub method: Method,
    /// Truncation length; `None` for the pool over all lengths.
    pub length: Option<usize>,
    pub auc: f64,
    pub pauc: f64,
    pub n_neg: usize,
    pub n_pos: usize,
    pub mean_t_unique: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullFpr {
    pub method: Method,
    pub threshold: f64,
    pub fpr: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: Scenario,
    pub cells: Vec<CellMetrics>,
    pub null_fpr: Vec<NullFpr>,
}

/// Everything a detector needs beyond the tokens.
struct DetectorCtx {
    dist: ScoreDistribution,
    n: usize,
    lrt: Option<GammaLrtParams>,
    kde: Option<(DensityEstimate, DensityEstimate)>,
    kirchenbauer: Option<(f64, f64)>,
    vocab: usize,
}

impl DetectorCtx {
    fn new(s: &Scenario) -> Result<Self> {
        let lrt = match (s.dist, s.detectors.contains(&Method::LrtGamma)) {
            (ScoreDistribution::NegGamma { k, beta }, true) => Some(GammaLrtParams::new(k, s.scheme.m() as u32, beta)?),
            _ => None,
        };
        let kde = if s.detectors.contains(&Method::LrtKde) {
            let f0 = estimate_f0(&s.dist, KDE_FIT_SAMPLES, s.rng_seed ^ 0xf0)?;
            let f1 = estimate_f1(&s.dist, s.k, s.scheme.m(), KDE_FIT_SAMPLES, s.rng_seed ^ 0xf1)?;
            Some((f0, f1))
        } else {
            None
        };
        let kirchenbauer = match s.scheme {
            Scheme::Kirchenbauer { gamma, delta } => Some((gamma, delta)),
            _ => None,
        };
        Ok(Self { dist: s.dist, n: s.n, lrt, kde, kirchenbauer, vocab: s.vocab()? })
    }

    fn run(&self, method: Method, tokens: &[TokenId], keys: &[SecretKey]) -> Result<DetectionReport> {
        let key = keys[0];
        match method {
            Method::Sum => detect(&self.dist, tokens, key, self.n),
            Method::Fisher => detect_fisher(&self.dist, tokens, key, self.n),
            Method::Recursive => detect_recursive(&self.dist, tokens, keys, self.n),
            Method::LrtGamma => {
                let p = self.lrt.as_ref().ok_or_else(|| invalid("lrt_gamma not configured"))?;
                detect_lrt_gamma(&self.dist, p, tokens, key, self.n)
            }
            Method::LrtKde => {
                let (f0, f1) = self.kde.as_ref().ok_or_else(|| invalid("lrt_kde not configured"))?;
                detect_lrt_kde(&self.dist, f0, f1, tokens, key, self.n)
            }
            Method::Aaronson => aaronson_score(tokens, key, self.n, AaronsonVariant::Raw),
            Method::AaronsonFisher => aaronson_score(tokens, key, self.n, AaronsonVariant::FisherCorrected),
            Method::AaronsonSum => aaronson_score(tokens, key, self.n, AaronsonVariant::SumCorrected),
            Method::Kirchenbauer => {
                let (gamma, delta) = self.kirchenbauer.ok_or_else(|| invalid("kirchenbauer not configured"))?;
                let cfg = KirchenbauerConfig { gamma, delta, n: self.n, key };
                kirchenbauer_score(tokens, &cfg, self.vocab)
            }
        }
    }
}

/// Scores of one trial: `[detector][truncation] -> (neg, pos)` reports.
type TrialScores = Vec<Vec<(DetectionReport, DetectionReport)>>;

fn fresh_keys<R: RngCore>(count: usize, rng: &mut R) -> Vec<SecretKey> {
    let mut seen = HashSet::new();
    let mut keys = Vec::with_capacity(count);
    while keys.len() < count {
        let k = rng.next_u64();
        if seen.insert(k) {
            keys.push(k);
        }
    }
    keys
}

fn run_trial(s: &Scenario, ctx: &DetectorCtx, index: u64) -> Result<TrialScores> {
    let mut rng = trial_rng(s.rng_seed, index);
    let pos_seed = rng.next_u64();
    let neg_seed = rng.next_u64();
    let enc_seed = rng.next_u64();
    let keys = if s.fresh_keys { fresh_keys(s.keys.len(), &mut rng) } else { s.keys.clone() };

    let pos_sampler = s.sampler.with_rng_seed(pos_seed).build_mock()?;
    let positive = match s.scheme {
        Scheme::Flat { .. } | Scheme::Recursive { .. } => {
            let cfg = s.watermark_config(s.scheme_keys(&keys), enc_seed)?;
            watermark(&cfg, &s.prompt, &pos_sampler)?
        }
        Scheme::Aaronson => aaronson_generate(&pos_sampler, &s.prompt, keys[0], s.n, s.max_len)?,
        Scheme::Kirchenbauer { gamma, delta } => {
            let cfg = s.kirchenbauer(gamma, delta, keys[0]);
            kirchenbauer_generate(&pos_sampler, &s.prompt, &cfg, s.max_len, &mut rng)?
        }
    };
    let positive = if s.attack_pct > 0.0 {
        attack_replace(&positive, s.attack_pct, ctx.vocab, &mut rng)?
    } else {
        positive
    };
    let neg_sampler = s.sampler.with_rng_seed(neg_seed).build_mock()?;
    let negative = generate_plain(&neg_sampler, &s.prompt, s.k, s.max_len)?;

    let mut out = Vec::with_capacity(s.detectors.len());
    for &method in &s.detectors {
        let mut per_len = Vec::with_capacity(s.truncations.len());
        for &len in &s.truncations {
            let neg = ctx.run(method, &negative[..len.min(negative.len())], &keys)?;
            let pos = ctx.run(method, &positive[..len.min(positive.len())], &keys)?;
            per_len.push((neg, pos));
        }
        out.push(per_len);
    }
    Ok(out)
}

/// Run a scenario. Trials run in parallel; each is seeded by
/// `(rng_seed, trial index)`, so the report does not depend on scheduling.
pub fn end_to_end_bench(s: &Scenario) -> Result<BenchReport> {
    s.validate()?;
    let ctx = DetectorCtx::new(s)?;
    let trials: Vec<TrialScores> =
        (0..s.trials as u64).into_par_iter().map(|i| run_trial(s, &ctx, i)).collect::<Result<_>>()?;

    let mut cells = Vec::new();
    let mut null_fpr = Vec::new();
    for (d, &method) in s.detectors.iter().enumerate() {
        let mut pooled_neg = Vec::new();
        let mut pooled_pos = Vec::new();
        let mut pooled_t = 0usize;
        let mut null_p = Vec::new();
        for (l, &len) in s.truncations.iter().enumerate() {
            let pairs: Vec<&(DetectionReport, DetectionReport)> = trials.iter().map(|t| &t[d][l]).collect();
            let neg: Vec<f64> = pairs.iter().map(|p| p.0.ranking_statistic()).collect();
            let pos: Vec<f64> = pairs.iter().map(|p| p.1.ranking_statistic()).collect();
            let t_sum: usize = pairs.iter().map(|p| p.1.t_unique).sum();
            let curve = roc(&neg, &pos)?;
            cells.push(CellMetrics {
                method,
                length: Some(len),
                auc: curve.auc,
                pauc: curve.pauc_at(s.pauc_fpr),
                n_neg: neg.len(),
                n_pos: pos.len(),
                mean_t_unique: t_sum as f64 / pairs.len() as f64,
            });
            pooled_neg.extend(neg);
            pooled_pos.extend(pos);
            pooled_t += t_sum;
            null_p.extend(pairs.iter().filter_map(|p| p.0.p_value));
        }
        if s.truncations.len() > 1 {
            let curve = roc(&pooled_neg, &pooled_pos)?;
            cells.push(CellMetrics {
                method,
                length: None,
                auc: curve.auc,
                pauc: curve.pauc_at(s.pauc_fpr),
                n_neg: pooled_neg.len(),
                n_pos: pooled_pos.len(),
                mean_t_unique: pooled_t as f64 / pooled_pos.len() as f64,
            });
        }
        if !null_p.is_empty() {
            for th in NULL_FPR_THRESHOLDS {
                // score >= th  <=>  p <= 1 - th
                let hits = null_p.iter().filter(|&&p| p <= 1.0 - th).count();
                null_fpr.push(NullFpr {
                    method,
                    threshold: th,
                    fpr: hits as f64 / null_p.len() as f64,
                    sigma: binomial_sigma(1.0 - th, null_p.len()),
                });
            }
        }
    }
    Ok(BenchReport { scenario: s.clone(), cells, null_fpr })
}

impl BenchReport {
    pub fn cell(&self, method: Method, length: Option<usize>) -> Option<&CellMetrics> {
        self.cells.iter().find(|c| c.method == method && c.length == length)
    }

    /// Plain-text table, one row per cell.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} (rng_seed {}, {} trials)", self.scenario.name, self.scenario.rng_seed, self.scenario.trials);
        let _ = writeln!(out, "{:<16} {:>7} {:>8} {:>8} {:>8}", "method", "length", "auc", "pauc", "mean_T");
        for c in &self.cells {
            let len = c.length.map_or("pooled".to_string(), |l| l.to_string());
            let _ = writeln!(out, "{:<16} {:>7} {:>8.4} {:>8.4} {:>8.1}", c.method.as_str(), len, c.auc, c.pauc, c.mean_t_unique);
        }
        for f in &self.null_fpr {
            let _ = writeln!(
                out,
                "null FPR {:<16} score >= {:.2}: {:.4} (expected {:.2} ± {:.4})",
                f.method.as_str(),
                f.threshold,
                f.fpr,
                1.0 - f.threshold,
                3.0 * f.sigma
            );
        }
        out
    }

    /// CSV with a header row, one line per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,method,length,auc,pauc,n_neg,n_pos,mean_t_unique\n");
        for c in &self.cells {
            let len = c.length.map_or("pooled".to_string(), |l| l.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.scenario.name,
                c.method.as_str(),
                len,
                c.auc,
                c.pauc,
                c.n_neg,
                c.n_pos,
                c.mean_t_unique
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario {
            name: "small".into(),
            sampler: SamplerSpec::UniformMock { vocab_size: 50, rng_seed: 0 },
            scheme: Scheme::Flat { m: 8 },
            keys: vec![3],
            fresh_keys: false,
            dist: ScoreDistribution::Uniform01,
            n: 3,
            k: 5,
            max_len: 40,
            trials: 30,
            attack_pct: 0.0,
            truncations: vec![20, 40],
            detectors: vec![Method::Sum, Method::Fisher],
            pauc_fpr: 0.1,
            prompt: vec![],
            rng_seed: 11,
        }
    }

    #[test]
    fn reproducible_and_well_formed() {
        let a = end_to_end_bench(&small()).unwrap();
        let b = end_to_end_bench(&small()).unwrap();
        assert_eq!(a, b);
        // Two lengths plus the pool for each of two detectors.
        assert_eq!(a.cells.len(), 6);
        assert!(a.cells.iter().all(|c| (0.0..=1.0).contains(&c.auc)));
        assert!(a.render_table().contains("pooled"));
        assert_eq!(a.to_csv().lines().count(), 7);
    }

    #[test]
    fn rejects_transport_samplers_and_bad_detectors() {
        let mut s = small();
        s.sampler = SamplerSpec::Http {
            url: "http://127.0.0.1:1/".into(),
            max_in_flight: 1,
            timeout_ms: None,
            retry: Default::default(),
        };
        assert!(end_to_end_bench(&s).is_err());
        let mut s = small();
        s.detectors = vec![Method::LrtGamma];
        assert!(end_to_end_bench(&s).is_err());
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let s = Scenario::dummy_lm_recursive();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&j).unwrap(), s);
    }
}
