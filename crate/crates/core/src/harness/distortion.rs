//! Empirical output law of the encoder against the exact law of a mock model.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trial_rng;
use crate::encoder::{watermark, WatermarkConfig};
use crate::error::{invalid, Result};
use crate::prf::TokenId;
use crate::sampler::{NextTokenModel, SamplerSpec};
use crate::stats::{chi2_gof, total_variation};

/// Largest outcome space `V^len` the simulator will enumerate.
pub const MAX_OUTCOMES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub runs: u64,
    pub outcomes: usize,
    pub tv: f64,
    pub chi2_p: f64,
}

/// Generate `runs` texts of exactly `config.max_len` tokens under `config`,
/// with a fresh key and encoder seed per run when `fresh_keys` is set, and
/// compare the histogram with the model's exact sequence probabilities.
///
/// The mock's chains never stop early, so every run has the full length.
pub fn distortion_sim(
    sampler: &SamplerSpec,
    config: &WatermarkConfig,
    fresh_keys: bool,
    runs: u64,
    rng_seed: u64,
) -> Result<DistortionReport> {
    config.validate()?;
    let mock = sampler.build_mock()?;
    let v = mock.vocab_size();
    let len = config.max_len;
    let outcomes = (0..len).try_fold(1usize, |acc, _| acc.checked_mul(v).filter(|&o| o <= MAX_OUTCOMES));
    let outcomes = outcomes.ok_or_else(|| invalid(format!("vocab^len exceeds {MAX_OUTCOMES} outcomes")))?;
    if runs == 0 {
        return Err(invalid("runs must be at least 1"));
    }

    let probs: Vec<f64> = (0..outcomes).into_par_iter().map(|i| sequence_prob(&mock, &decode(i, v, len))).collect();
    let hits: Vec<usize> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(rng_seed, i);
            let mut cfg = config.clone();
            if fresh_keys {
                cfg.keys = cfg.keys.iter().map(|_| rng.next_u64()).collect();
                cfg.rng_seed = rng.next_u64();
            }
            let out = watermark(&cfg, &[], &sampler.with_rng_seed(rng.next_u64()).build_mock()?)?;
            if out.len() != len {
                return Err(invalid("the sampler stopped before max_len"));
            }
            Ok(encode(&out, v))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; outcomes];
    for h in hits {
        counts[h] += 1;
    }
    Ok(DistortionReport { runs, outcomes, tv: total_variation(&counts, &probs), chi2_p: chi2_gof(&counts, &probs)?.p_value })
}

fn decode(mut idx: usize, v: usize, len: usize) -> Vec<TokenId> {
    let mut seq = vec![0; len];
    for slot in seq.iter_mut().rev() {
        *slot = (idx % v) as TokenId;
        idx /= v;
    }
    seq
}

fn encode(seq: &[TokenId], v: usize) -> usize {
    seq.iter().fold(0, |acc, &t| acc * v + t as usize)
}

fn sequence_prob(model: &dyn NextTokenModel, seq: &[TokenId]) -> f64 {
    (0..seq.len()).map(|i| model.next_token_probs(&seq[..i])[seq[i] as usize]).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ScoreDistribution;

    #[test]
    fn encode_inverts_decode() {
        for i in [0, 7, 124] {
            assert_eq!(encode(&decode(i, 5, 3), 5), i);
        }
        assert_eq!(decode(7, 5, 3), vec![0, 1, 2]);
    }

    #[test]
    fn single_chunk_is_undistorted() {
        let spec = SamplerSpec::MarkovMock { vocab_size: 4, sharpness: 1.0, transition_seed: 2, rng_seed: 0 };
        let cfg = WatermarkConfig::flat(ScoreDistribution::Uniform01, 0, 4, 2, 2, 2);
        let r = distortion_sim(&spec, &cfg, true, 20_000, 1).unwrap();
        assert_eq!(r.outcomes, 16);
        assert!(r.tv < 0.03 && r.chi2_p > 0.001, "{r:?}");
    }

    #[test]
    fn rejects_huge_outcome_spaces() {
        let spec = SamplerSpec::UniformMock { vocab_size: 1000, rng_seed: 0 };
        let cfg = WatermarkConfig::flat(ScoreDistribution::Uniform01, 0, 2, 2, 1, 3);
        assert!(distortion_sim(&spec, &cfg, false, 10, 0).is_err());
    }
}
