//! Mock language models with known next-token distributions.
//!
//! Each call to [`MockSampler::sample`] takes the next value of an atomic call
//! counter and uses it as the ChaCha stream id under the sampler's seed, so a
//! run is reproducible as a multiset of outputs even when calls race, and any
//! two calls are independent.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_vocab, NextTokenModel, SequenceSampler};
use crate::error::{invalid, Result, SamplerError};
use crate::prf::TokenId;

/// Categorical law with a precomputed CDF table.
#[derive(Debug)]
pub struct Categorical {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl Categorical {
    fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("categorical weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("categorical weights sum to zero"));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Pin the top of the table to 1 from the last positive-probability slot on.
        let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
        Ok(Self { probs, cdf })
    }

    fn draw(&self, rng: &mut impl Rng) -> TokenId {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1) as TokenId
    }
}

/// The next-token law of a mock language model.
#[derive(Debug)]
pub enum MockModel {
    Uniform { vocab: usize },
    /// Context-free categorical (covers Zipf).
    Fixed(Categorical),
    Markov(Markov),
}

#[derive(Debug)]
pub struct Markov {
    vocab: usize,
    sharpness: f64,
    transition_seed: u64,
    /// One row per previous token plus a start row at index `vocab`.
    rows: Vec<OnceLock<Arc<Categorical>>>,
}

impl Markov {
    fn row(&self, prev: Option<TokenId>) -> Arc<Categorical> {
        let idx = match prev {
            Some(t) if (t as usize) < self.vocab => t as usize,
            Some(t) => t as usize % self.vocab,
            None => self.vocab,
        };
        self.rows[idx]
            .get_or_init(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.transition_seed);
                rng.set_stream(idx as u64);
                let g: Vec<f64> = (0..self.vocab).map(|_| rng.sample(StandardNormal)).collect();
                let weights = if self.sharpness.is_infinite() {
                    let best = g
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    (0..self.vocab).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
                } else {
                    let top = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    g.iter().map(|x| (self.sharpness * (x - top)).exp()).collect()
                };
                Arc::new(Categorical::new(weights).expect("softmax weights are positive"))
            })
            .clone()
    }
}

impl MockModel {
    pub fn uniform(vocab: usize) -> Result<Self> {
        check_vocab(vocab)?;
        Ok(MockModel::Uniform { vocab })
    }

    /// `p_i ∝ 1 / (i + 1)^exponent`.
    pub fn zipf(vocab: usize, exponent: f64) -> Result<Self> {
        check_vocab(vocab)?;
        if !(exponent >= 0.0 && exponent.is_finite()) {
            return Err(invalid("zipf exponent must be finite and non-negative"));
        }
        let w = (1..=vocab).map(|r| (r as f64).powf(-exponent)).collect();
        Ok(MockModel::Fixed(Categorical::new(w)?))
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self> {
        check_vocab(probs.len())?;
        Ok(MockModel::Fixed(Categorical::new(probs)?))
    }

    pub fn markov(vocab: usize, sharpness: f64, transition_seed: u64) -> Result<Self> {
        check_vocab(vocab)?;
        if !(sharpness >= 0.0) {
            return Err(invalid("markov sharpness must be non-negative"));
        }
        Ok(MockModel::Markov(Markov {
            vocab,
            sharpness,
            transition_seed,
            rows: (0..=vocab).map(|_| OnceLock::new()).collect(),
        }))
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            MockModel::Uniform { vocab } => *vocab,
            MockModel::Fixed(c) => c.probs.len(),
            MockModel::Markov(m) => m.vocab,
        }
    }

    fn draw(&self, prev: Option<TokenId>, rng: &mut impl Rng) -> TokenId {
        match self {
            MockModel::Uniform { vocab } => rng.random_range(0..*vocab as TokenId),
            MockModel::Fixed(c) => c.draw(rng),
            MockModel::Markov(m) => m.row(prev).draw(rng),
        }
    }

    pub fn probs(&self, context: &[TokenId]) -> Vec<f64> {
        match self {
            MockModel::Uniform { vocab } => vec![1.0 / *vocab as f64; *vocab],
            MockModel::Fixed(c) => c.probs.clone(),
            MockModel::Markov(m) => m.row(context.last().copied()).probs.clone(),
        }
    }
}

/// Reproducible i.i.d. sampler over a [`MockModel`].
#[derive(Debug)]
pub struct MockSampler {
    model: MockModel,
    rng_seed: u64,
    calls: AtomicU64,
}

impl MockSampler {
    pub fn new(model: MockModel, rng_seed: u64) -> Self {
        Self { model, rng_seed, calls: AtomicU64::new(0) }
    }

    pub fn model(&self) -> &MockModel {
        &self.model
    }

    /// Number of `sample` calls served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Sample `max_tokens` tokens; infallible form of [`SequenceSampler::sample`].
    pub fn draw(&self, prompt: &[TokenId], max_tokens: usize) -> Vec<TokenId> {
        let idx = self.calls.fetch_add(1, Ordering::SeqCst);
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(idx);
        let mut out = Vec::with_capacity(max_tokens);
        let mut prev = prompt.last().copied();
        for _ in 0..max_tokens {
            let t = self.model.draw(prev, &mut rng);
            out.push(t);
            prev = Some(t);
        }
        out
    }
}

impl SequenceSampler for MockSampler {
    fn sample(&self, prompt: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>, SamplerError> {
        Ok(self.draw(prompt, max_tokens))
    }
}

impl NextTokenModel for MockSampler {
    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    fn next_token_probs(&self, context: &[TokenId]) -> Vec<f64> {
        self.model.probs(context)
    }
}
