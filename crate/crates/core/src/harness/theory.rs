//! Closed-form guarantees and the idealized-model simulators that check them.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trial_rng;
use crate::detector::GammaLrtParams;
use crate::error::{invalid, Result};
use crate::sampler::MockModel;
use crate::stats::binomial_sigma;

/// `λ = (1 / ln m) (m / (m + 1) − 1/2)`.
pub fn lambda(m: u64) -> f64 {
    assert!(m >= 2, "lambda needs m >= 2");
    let mf = m as f64;
    (mf / (mf + 1.0) - 0.5) / mf.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    pub m: u64,
    /// Number of unique test n-grams.
    pub t: u64,
    /// Entropy term in nats, within `[0, ln m]`.
    pub alpha: f64,
}

impl BoundParams {
    pub fn lambda(&self) -> f64 {
        lambda(self.m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.t < 1 {
            return Err(invalid("the AUC bound needs m >= 2 and T >= 1"));
        }
        // Small slack for simulated α that lands a rounding error above ln m.
        if !(self.alpha >= 0.0 && self.alpha <= (self.m as f64).ln() + 1e-9) {
            return Err(invalid(format!("alpha {} outside [0, ln m]", self.alpha)));
        }
        Ok(())
    }
}

/// Lower bound `1 / (1 + 1 / (3 T λ² α²))` on the ROC-AUC of the flat scheme
/// with `k = 1` and uniform `F`. Zero at `α = 0`.
pub fn theorem2_bound(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    if p.alpha == 0.0 {
        return Ok(0.0);
    }
    let l = p.lambda();
    Ok(1.0 / (1.0 + 1.0 / (3.0 * p.t as f64 * l * l * p.alpha * p.alpha)))
}

/// The bound as `m → ∞` with `α = ln m`: `1 / (1 + 4 / (3T))`.
pub fn theorem2_limit(t: u64) -> f64 {
    1.0 / (1.0 + 4.0 / (3.0 * t as f64))
}

/// Next-token law for the α simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum VocabLaw {
    Uniform { vocab_size: usize },
    Zipf { vocab_size: usize, exponent: f64 },
}

impl VocabLaw {
    pub fn probs(&self) -> Result<Vec<f64>> {
        let model = match *self {
            VocabLaw::Uniform { vocab_size } => MockModel::uniform(vocab_size)?,
            VocabLaw::Zipf { vocab_size, exponent } => MockModel::zipf(vocab_size, exponent)?,
        };
        Ok(model.probs(&[]))
    }
}

pub const MIN_ALPHA_TRIALS: usize = 100;

/// Mean entropy of the empirical distribution of `m` draws from `law`.
pub fn simulate_alpha(law: &VocabLaw, m: usize, trials: usize, rng_seed: u64) -> Result<f64> {
    if trials < MIN_ALPHA_TRIALS {
        return Err(invalid(format!("alpha simulation needs at least {MIN_ALPHA_TRIALS} trials")));
    }
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    alpha_from_probs(&law.probs()?, m, trials, rng_seed)
}

pub fn alpha_from_probs(probs: &[f64], m: usize, trials: usize, rng_seed: u64) -> Result<f64> {
    let mut acc = 0.0;
    let cdf: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let total: f64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(rng_seed, i as u64);
            let mut draws: Vec<usize> = (0..m)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * acc;
                    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
                })
                .collect();
            draws.sort_unstable();
            let mut h = 0.0;
            let mut i = 0;
            while i < draws.len() {
                let j = draws[i..].iter().position(|&d| d != draws[i]).map_or(draws.len(), |o| i + o);
                let q = (j - i) as f64 / m as f64;
                h -= q * q.ln();
                i = j;
            }
            h
        })
        .sum();
    Ok(total / trials as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub t: usize,
    pub fpr: f64,
    pub threshold: f64,
    pub tpr: f64,
}

/// Closed-form TPR of the Gamma LRT at each target FPR along `t_grid`.
pub fn gamma_rate_curves(k: u32, m: u32, beta: f64, t_grid: &[usize], fpr_targets: &[f64]) -> Result<Vec<RatePoint>> {
    let p = GammaLrtParams::new(k, m, beta)?;
    let mut out = Vec::with_capacity(t_grid.len() * fpr_targets.len());
    for &t in t_grid {
        if t == 0 {
            return Err(invalid("T must be at least 1"));
        }
        for &fpr in fpr_targets {
            if m == 1 {
                // Null and alternative coincide.
                out.push(RatePoint { t, fpr, threshold: p.sup_statistic(t), tpr: fpr });
                continue;
            }
            let threshold = p.threshold_for_fpr(t, fpr)?;
            out.push(RatePoint { t, fpr, threshold, tpr: p.tpr(t, threshold) });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealizedRow {
    pub fpr_target: f64,
    pub threshold: f64,
    pub fpr_closed: f64,
    pub fpr_empirical: f64,
    pub fpr_sigma: f64,
    pub fnr_closed: f64,
    pub fnr_empirical: f64,
    pub fnr_sigma: f64,
}

pub const MIN_IDEALIZED_TRIALS: usize = 10_000;

fn gamma(k: u32, rate: f64) -> Gamma<f64> {
    Gamma::new(1.0 / k as f64, 1.0 / rate).expect("positive gamma parameters")
}

/// Entries of the winning row of one `m × k` matrix of −Gamma(1/k, β) draws.
fn winner_row<R: Rng + ?Sized>(g: &Gamma<f64>, k: usize, m: usize, rng: &mut R, row: &mut Vec<f64>, best: &mut Vec<f64>) {
    let mut best_sum = f64::NEG_INFINITY;
    for _ in 0..m {
        row.clear();
        let mut s = 0.0;
        for _ in 0..k {
            let x = -g.sample(rng);
            s += x;
            row.push(x);
        }
        if s > best_sum {
            best_sum = s;
            std::mem::swap(row, best);
        }
    }
}

/// Monte Carlo of the no-duplicate model against the closed-form rates.
///
/// Null texts carry `T` i.i.d. draws; watermarked texts carry `T` entries
/// taken from successive winning rows.
pub fn idealized_gamma_sim(
    k: u32,
    m: u32,
    beta: f64,
    t: usize,
    trials: usize,
    fpr_targets: &[f64],
    rng_seed: u64,
) -> Result<Vec<IdealizedRow>> {
    if trials < MIN_IDEALIZED_TRIALS {
        return Err(invalid(format!("idealized simulation needs at least {MIN_IDEALIZED_TRIALS} trials")));
    }
    if t == 0 || m < 2 {
        return Err(invalid("idealized simulation needs T >= 1 and m >= 2"));
    }
    let p = GammaLrtParams::new(k, m, beta)?;
    let thresholds: Vec<f64> = fpr_targets.iter().map(|&a| p.threshold_for_fpr(t, a)).collect::<Result<_>>()?;
    let g = gamma(k, beta);
    let (ku, mu) = (k as usize, m as usize);

    let stats: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(rng_seed, i as u64);
            let null: Vec<f64> = (0..t).map(|_| -g.sample(&mut rng)).collect();
            let mut marked = Vec::with_capacity(t);
            let (mut row, mut best) = (Vec::with_capacity(ku), Vec::with_capacity(ku));
            while marked.len() < t {
                winner_row(&g, ku, mu, &mut rng, &mut row, &mut best);
                let take = (t - marked.len()).min(ku);
                marked.extend_from_slice(&best[..take]);
            }
            (p.statistic(&null), p.statistic(&marked))
        })
        .collect();

    Ok(fpr_targets
        .iter()
        .zip(&thresholds)
        .map(|(&fpr_target, &th)| {
            let fp = stats.iter().filter(|s| s.0 >= th).count() as f64 / trials as f64;
            let fnr = stats.iter().filter(|s| s.1 < th).count() as f64 / trials as f64;
            let fpr_closed = p.fpr(t, th);
            let fnr_closed = p.fnr(t, th);
            IdealizedRow {
                fpr_target,
                threshold: th,
                fpr_closed,
                fpr_empirical: fp,
                fpr_sigma: binomial_sigma(fpr_closed, trials),
                fnr_closed,
                fnr_empirical: fnr,
                fnr_sigma: binomial_sigma(fnr_closed, trials),
            }
        })
        .collect())
}

/// First entries of `samples` independent winning rows.
pub fn winner_entries(k: u32, m: u32, beta: f64, samples: usize, rng_seed: u64) -> Result<Vec<f64>> {
    if k == 0 || m == 0 || !(beta > 0.0) {
        return Err(invalid("winner simulation needs k, m >= 1 and beta > 0"));
    }
    let g = gamma(k, beta);
    Ok((0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(rng_seed, i as u64);
            let (mut row, mut best) = (Vec::with_capacity(k as usize), Vec::with_capacity(k as usize));
            winner_row(&g, k as usize, m as usize, &mut rng, &mut row, &mut best);
            best[0]
        })
        .collect())
}
