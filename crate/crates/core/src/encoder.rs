//! Watermark embedding.
//!
//! Each chunk is produced by drawing `m` candidate continuations from the
//! sampler, reducing them to unique sequences with counts `cᵢ`, scoring every
//! unique sequence with the keyed PRF, and keeping the sequence that maximizes
//! `uᵢ^(m/cᵢ)`. With several keys the sampler of each level is the selection
//! procedure of the next key, so the first key selects among `m` outputs of
//! the second key's selection, and so on; the last key wraps the raw sampler.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::ScoreDistribution;
use crate::error::{invalid, Error, Result};
use crate::prf::{hash_ngram, ngram_windows, prf_draw, SecretKey, Seed, TokenId};
use crate::sampler::SequenceSampler;

/// Default cap on raw sampler calls per chunk (`m^t`).
pub const DEFAULT_FANOUT_BUDGET: u64 = 1 << 20;

fn default_budget() -> u64 {
    DEFAULT_FANOUT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkConfig {
    pub dist: ScoreDistribution,
    /// One key for the flat scheme; several for the recursive scheme, outermost first.
    pub keys: Vec<SecretKey>,
    /// Candidates per selection (per level when recursive).
    pub m: usize,
    /// n-gram length.
    pub n: usize,
    /// Maximum tokens per chunk.
    pub k: usize,
    /// Total token budget of a generation.
    pub max_len: usize,
    /// Seed of the encoder's auxiliary randomness (dedup tie-breaks, fallback seeds).
    #[serde(default)]
    pub rng_seed: u64,
    /// Upper bound on `m^t`, checked before any sampling.
    #[serde(default = "default_budget")]
    pub fanout_budget: u64,
    /// Issue the `m` sampler calls of a selection concurrently.
    #[serde(default)]
    pub parallel_sampling: bool,
}

impl WatermarkConfig {
    pub fn flat(dist: ScoreDistribution, key: SecretKey, m: usize, n: usize, k: usize, max_len: usize) -> Self {
        Self::recursive(dist, vec![key], m, n, k, max_len)
    }

    pub fn recursive(
        dist: ScoreDistribution,
        keys: Vec<SecretKey>,
        m: usize,
        n: usize,
        k: usize,
        max_len: usize,
    ) -> Self {
        Self {
            dist,
            keys,
            m,
            n,
            k,
            max_len,
            rng_seed: 0,
            fanout_budget: DEFAULT_FANOUT_BUDGET,
            parallel_sampling: false,
        }
    }

    pub fn with_rng_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Raw sampler calls per chunk, `m^t`, saturating.
    pub fn raw_samples_per_chunk(&self) -> u128 {
        let mut total: u128 = 1;
        for _ in 0..self.keys.len() {
            total = total.saturating_mul(self.m as u128);
        }
        total
    }

    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        if self.m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if self.keys.is_empty() {
            return Err(invalid("at least one key is required"));
        }
        let distinct: HashSet<_> = self.keys.iter().collect();
        if distinct.len() != self.keys.len() {
            return Err(invalid("keys must be pairwise distinct"));
        }
        let requested = self.raw_samples_per_chunk();
        if requested > self.fanout_budget as u128 {
            return Err(Error::BudgetExceeded { requested, budget: self.fanout_budget });
        }
        Ok(())
    }
}

/// Where a chunk is generated: the original prompt (never hashed) and the
/// output so far (usable as n-gram left context).
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub prompt: &'a [TokenId],
    pub generated: &'a [TokenId],
}

impl<'a> Context<'a> {
    pub fn new(prompt: &'a [TokenId], generated: &'a [TokenId]) -> Self {
        Self { prompt, generated }
    }

    fn full_prompt(&self) -> Vec<TokenId> {
        let mut p = Vec::with_capacity(self.prompt.len() + self.generated.len());
        p.extend_from_slice(self.prompt);
        p.extend_from_slice(self.generated);
        p
    }
}

/// Per-candidate outcome of [`score_seqs`].
#[derive(Debug, Clone)]
pub struct ScoredCandidates {
    /// Deduplicated seeds per candidate; disjoint across candidates.
    pub seeds: Vec<Vec<Seed>>,
    /// Whether the candidate's only seed is a fresh fallback seed.
    pub fallback: Vec<bool>,
    /// `uᵢ = F_{|Sᵢ|}(Σ F[s])`.
    pub scores: Vec<f64>,
    /// `ln uᵢ`, computed without going through `uᵢ`.
    pub ln_scores: Vec<f64>,
}

/// Score distinct candidate continuations of `generated` under `key`.
///
/// Seeds shared by several n-gram instances (within or across candidates) are
/// kept once, at an instance chosen uniformly at random; a candidate left
/// without seeds gets one fresh random seed not used elsewhere.
pub fn score_seqs<R: Rng + ?Sized>(
    dist: &ScoreDistribution,
    candidates: &[&[TokenId]],
    key: SecretKey,
    n: usize,
    generated: &[TokenId],
    rng: &mut R,
) -> ScoredCandidates {
    let mut instances: Vec<(Seed, usize)> = Vec::new();
    let mut buf: Vec<TokenId> = Vec::new();
    for (i, cand) in candidates.iter().enumerate() {
        // Only the last n - 1 generated tokens can reach into the candidate.
        let ctx = &generated[generated.len().saturating_sub(n.saturating_sub(1))..];
        buf.clear();
        buf.extend_from_slice(ctx);
        buf.extend_from_slice(cand);
        for w in ngram_windows(&buf, n, 0, ctx.len()) {
            instances.push((hash_ngram(key, w), i));
        }
    }
    instances.shuffle(rng);

    let mut used: HashSet<Seed> = HashSet::with_capacity(instances.len());
    let mut seeds: Vec<Vec<Seed>> = vec![Vec::new(); candidates.len()];
    for (seed, i) in instances {
        if used.insert(seed) {
            seeds[i].push(seed);
        }
    }

    let mut fallback = vec![false; candidates.len()];
    for (i, s) in seeds.iter_mut().enumerate() {
        if s.is_empty() {
            let fresh = loop {
                let cand = Seed(rng.next_u64());
                if used.insert(cand) {
                    break cand;
                }
            };
            s.push(fresh);
            fallback[i] = true;
        }
    }

    let mut scores = Vec::with_capacity(candidates.len());
    let mut ln_scores = Vec::with_capacity(candidates.len());
    for s in &seeds {
        let total: f64 = s.iter().map(|&seed| prf_draw(dist, seed)).sum();
        let t = s.len() as u64;
        scores.push(dist.sum_cdf(t, total).expect("t >= 1"));
        ln_scores.push(dist.sum_ln_cdf(t, total).expect("t >= 1"));
    }
    ScoredCandidates { seeds, fallback, scores, ln_scores }
}

/// Index maximizing `(m / cᵢ) · ln uᵢ`; ties go to the lowest index.
pub fn select_winner(ln_scores: &[f64], counts: &[usize], m: usize) -> usize {
    assert_eq!(ln_scores.len(), counts.len());
    assert!(!counts.is_empty(), "empty candidate pool");
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, (&lu, &c)) in ln_scores.iter().zip(counts).enumerate() {
        let v = (m as f64 / c as f64) * lu;
        if i == 0 || v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// The unique candidates of one selection with their scores and the winner.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub uniques: Vec<(Vec<TokenId>, usize)>,
    pub seeds: Vec<Vec<Seed>>,
    pub fallback: Vec<bool>,
    pub scores: Vec<f64>,
    pub winner: usize,
}

impl CandidatePool {
    pub fn winner_tokens(&self) -> &[TokenId] {
        &self.uniques[self.winner].0
    }

    /// Sample count `m` the pool was built from.
    pub fn m(&self) -> usize {
        self.uniques.iter().map(|u| u.1).sum()
    }
}

/// Unique sequences with counts, in order of first appearance.
pub fn unique_with_counts(samples: Vec<Vec<TokenId>>) -> Vec<(Vec<TokenId>, usize)> {
    let mut index: HashMap<Vec<TokenId>, usize> = HashMap::new();
    let mut uniques: Vec<(Vec<TokenId>, usize)> = Vec::new();
    for s in samples {
        match index.get(&s) {
            Some(&i) => uniques[i].1 += 1,
            None => {
                index.insert(s.clone(), uniques.len());
                uniques.push((s, 1));
            }
        }
    }
    uniques
}

/// Build the pool from already-drawn samples and select under `key`.
pub fn select_from_samples<R: Rng + ?Sized>(
    dist: &ScoreDistribution,
    key: SecretKey,
    n: usize,
    generated: &[TokenId],
    samples: Vec<Vec<TokenId>>,
    rng: &mut R,
) -> CandidatePool {
    let m = samples.len();
    let uniques = unique_with_counts(samples);
    let cands: Vec<&[TokenId]> = uniques.iter().map(|u| u.0.as_slice()).collect();
    let scored = score_seqs(dist, &cands, key, n, generated, rng);
    let counts: Vec<usize> = uniques.iter().map(|u| u.1).collect();
    let winner = select_winner(&scored.ln_scores, &counts, m);
    CandidatePool { uniques, seeds: scored.seeds, fallback: scored.fallback, scores: scored.scores, winner }
}

/// One flat selection: draw `m` sequences of at most `k` tokens and keep the
/// watermark winner.
pub fn watermark_single<S, R>(
    config: &WatermarkConfig,
    key: SecretKey,
    ctx: Context<'_>,
    k: usize,
    sampler: &S,
    rng: &mut R,
) -> Result<CandidatePool>
where
    S: SequenceSampler + ?Sized,
    R: Rng + ?Sized,
{
    let prompt = ctx.full_prompt();
    let samples = draw_many(config, rng, |_| Ok(sampler.sample(&prompt, k)?))?;
    Ok(select_from_samples(&config.dist, key, config.n, ctx.generated, samples, rng))
}

/// Draw `m` values, sequentially or concurrently, each with its own child RNG
/// derived up front so the outcome does not depend on scheduling.
fn draw_many<R, F>(config: &WatermarkConfig, rng: &mut R, draw: F) -> Result<Vec<Vec<TokenId>>>
where
    R: Rng + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> Result<Vec<TokenId>> + Sync,
{
    let child_seeds: Vec<u64> = (0..config.m).map(|_| rng.next_u64()).collect();
    let run = |s: &u64| {
        let mut child = ChaCha8Rng::seed_from_u64(*s);
        draw(&mut child)
    };
    if config.parallel_sampling {
        child_seeds.par_iter().map(run).collect()
    } else {
        child_seeds.iter().map(run).collect()
    }
}

/// One chunk of the nested scheme with `keys` (outermost first).
fn recursive_chunk<S>(
    config: &WatermarkConfig,
    keys: &[SecretKey],
    ctx: Context<'_>,
    k: usize,
    sampler: &S,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>>
where
    S: SequenceSampler + ?Sized,
{
    if keys.len() == 1 {
        return Ok(watermark_single(config, keys[0], ctx, k, sampler, rng)?.winner_tokens().to_vec());
    }
    let inner = &keys[1..];
    let samples = draw_many(config, rng, |child| recursive_chunk(config, inner, ctx, k, sampler, child))?;
    let pool = select_from_samples(&config.dist, keys[0], config.n, ctx.generated, samples, rng);
    Ok(pool.winner_tokens().to_vec())
}

/// Generate a watermarked continuation of `prompt` until `stop` holds.
///
/// `stop` is checked at chunk boundaries; each chunk asks for
/// `min(k, max_len - len)` tokens. An empty chunk ends the generation.
pub fn watermark_with_stop<S, F>(
    config: &WatermarkConfig,
    prompt: &[TokenId],
    sampler: &S,
    stop: F,
) -> Result<Vec<TokenId>>
where
    S: SequenceSampler + ?Sized,
    F: Fn(&[TokenId]) -> bool,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut out: Vec<TokenId> = Vec::new();
    while !stop(&out) && out.len() < config.max_len {
        let k = config.k.min(config.max_len - out.len());
        let chunk = recursive_chunk(config, &config.keys, Context::new(prompt, &out), k, sampler, &mut rng)?;
        if chunk.is_empty() {
            break;
        }
        out.extend_from_slice(&chunk);
    }
    Ok(out)
}

/// Flat or recursive watermarking (by the number of keys) up to `max_len` tokens.
pub fn watermark<S>(config: &WatermarkConfig, prompt: &[TokenId], sampler: &S) -> Result<Vec<TokenId>>
where
    S: SequenceSampler + ?Sized,
{
    watermark_with_stop(config, prompt, sampler, |_| false)
}

/// Recursive watermarking with keys `K₁..K_t`; identical to [`watermark`], kept
/// as the named entry point of the nested scheme.
pub fn watermark_recursive<S, F>(
    config: &WatermarkConfig,
    prompt: &[TokenId],
    sampler: &S,
    stop: F,
) -> Result<Vec<TokenId>>
where
    S: SequenceSampler + ?Sized,
    F: Fn(&[TokenId]) -> bool,
{
    watermark_with_stop(config, prompt, sampler, stop)
}

/// Plain (unwatermarked) generation with the same chunking as [`watermark`].
pub fn generate_plain<S>(sampler: &S, prompt: &[TokenId], k: usize, max_len: usize) -> Result<Vec<TokenId>>
where
    S: SequenceSampler + ?Sized,
{
    let mut out: Vec<TokenId> = Vec::new();
    while out.len() < max_len {
        let mut full = prompt.to_vec();
        full.extend_from_slice(&out);
        let chunk = sampler.sample(&full, k.min(max_len - out.len()))?;
        if chunk.is_empty() {
            break;
        }
        out.extend(chunk);
    }
    Ok(out)
}
