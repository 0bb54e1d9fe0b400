//! Black-box sequence samplers.
//!
//! The watermark only needs [`SequenceSampler`]: something that maps a prompt
//! and a token budget to one sampled continuation. Mock language models
//! additionally implement [`NextTokenModel`], which exposes the exact
//! next-token distribution; the white-box baselines and the entropy profile
//! require that capability, the core scheme does not.
//!
//! # Wire protocol (HTTP and subprocess adapters)
//!
//! One JSON object per request and per response. The HTTP adapter `POST`s the
//! request body to the configured URL; the subprocess adapter writes it as a
//! single line to the child's stdin and reads one line back from its stdout.
//!
//! ```text
//! request:  {"prompt":[17,4,4093],"max_tokens":20}
//! response: {"tokens":[88,12,7]}
//! ```
//!
//! Token ids are non-negative integers, never strings. A response may carry
//! fewer than `max_tokens` tokens but never more.

pub mod http;
pub mod mock;
pub mod subprocess;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result, SamplerError};
use crate::prf::TokenId;

pub use http::HttpSampler;
pub use mock::{MockModel, MockSampler};
pub use subprocess::SubprocessSampler;

/// Draws one sequence of at most `max_tokens` tokens conditioned on `prompt`.
/// Successive calls with the same prompt must be i.i.d.
pub trait SequenceSampler: Send + Sync {
    fn sample(&self, prompt: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>, SamplerError>;
}

impl<S: SequenceSampler + ?Sized> SequenceSampler for &S {
    fn sample(&self, prompt: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>, SamplerError> {
        (**self).sample(prompt, max_tokens)
    }
}

impl<S: SequenceSampler + ?Sized> SequenceSampler for Arc<S> {
    fn sample(&self, prompt: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>, SamplerError> {
        (**self).sample(prompt, max_tokens)
    }
}

impl<S: SequenceSampler + ?Sized> SequenceSampler for Box<S> {
    fn sample(&self, prompt: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>, SamplerError> {
        (**self).sample(prompt, max_tokens)
    }
}

/// White-box access: the exact next-token distribution given a context.
pub trait NextTokenModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn next_token_probs(&self, context: &[TokenId]) -> Vec<f64>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRequest {
    pub prompt: Vec<TokenId>,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleResponse {
    pub tokens: Vec<TokenId>,
}

/// Retry schedule for the transport adapters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff_ms: 50 }
    }
}

impl RetryPolicy {
    pub(crate) fn run<T>(&self, mut op: impl FnMut() -> Result<T, SamplerError>) -> Result<T, SamplerError> {
        let attempts = self.attempts.max(1);
        let mut delay = Duration::from_millis(self.initial_backoff_ms);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    log::warn!("sampler attempt {attempt}/{attempts} failed: {e}");
                    last = e.to_string();
                    if attempt < attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(SamplerError::Exhausted { attempts, last })
    }
}

pub(crate) fn check_response(tokens: Vec<TokenId>, max_tokens: usize) -> Result<Vec<TokenId>, SamplerError> {
    if tokens.len() > max_tokens {
        return Err(SamplerError::Protocol(format!(
            "backend returned {} tokens for max_tokens={max_tokens}",
            tokens.len()
        )));
    }
    Ok(tokens)
}

fn default_in_flight() -> usize {
    4
}

/// Declarative sampler configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    UniformMock {
        vocab_size: usize,
        #[serde(default)]
        rng_seed: u64,
    },
    ZipfMock {
        vocab_size: usize,
        exponent: f64,
        #[serde(default)]
        rng_seed: u64,
    },
    /// First-order Markov chain whose rows are `softmax(sharpness · g)` with
    /// `g` standard normal, drawn from `transition_seed`. Infinite sharpness
    /// gives deterministic rows.
    MarkovMock {
        vocab_size: usize,
        sharpness: f64,
        #[serde(default)]
        transition_seed: u64,
        #[serde(default)]
        rng_seed: u64,
    },
    /// Context-free categorical distribution over `probs.len()` tokens.
    CategoricalMock {
        probs: Vec<f64>,
        #[serde(default)]
        rng_seed: u64,
    },
    Subprocess {
        command: Vec<String>,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        retry: RetryPolicy,
    },
    Http {
        url: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        timeout_ms: Option<u64>,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

impl SamplerSpec {
    pub fn is_mock(&self) -> bool {
        !matches!(self, SamplerSpec::Subprocess { .. } | SamplerSpec::Http { .. })
    }

    /// Same spec with the sampling seed replaced (mock backends only).
    pub fn with_rng_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            SamplerSpec::UniformMock { rng_seed, .. }
            | SamplerSpec::ZipfMock { rng_seed, .. }
            | SamplerSpec::MarkovMock { rng_seed, .. }
            | SamplerSpec::CategoricalMock { rng_seed, .. } => *rng_seed = seed,
            _ => {}
        }
        s
    }

    /// Build a mock sampler; fails for transport backends.
    pub fn build_mock(&self) -> Result<MockSampler> {
        let (model, seed) = match self {
            SamplerSpec::UniformMock { vocab_size, rng_seed } => (MockModel::uniform(*vocab_size)?, *rng_seed),
            SamplerSpec::ZipfMock { vocab_size, exponent, rng_seed } => {
                (MockModel::zipf(*vocab_size, *exponent)?, *rng_seed)
            }
            SamplerSpec::MarkovMock { vocab_size, sharpness, transition_seed, rng_seed } => {
                (MockModel::markov(*vocab_size, *sharpness, *transition_seed)?, *rng_seed)
            }
            SamplerSpec::CategoricalMock { probs, rng_seed } => (MockModel::categorical(probs.clone())?, *rng_seed),
            _ => {
                return Err(Error::Unsupported(
                    "white-box access requires a mock backend".into(),
                ))
            }
        };
        Ok(MockSampler::new(model, seed))
    }

    pub fn build(&self) -> Result<Arc<dyn SequenceSampler>> {
        match self {
            SamplerSpec::Subprocess { command, max_in_flight, retry } => {
                Ok(Arc::new(SubprocessSampler::new(command.clone(), *max_in_flight, *retry)?))
            }
            SamplerSpec::Http { url, max_in_flight, timeout_ms, retry } => Ok(Arc::new(HttpSampler::new(
                url.clone(),
                *max_in_flight,
                timeout_ms.map(Duration::from_millis),
                *retry,
            )?)),
            _ => Ok(Arc::new(self.build_mock()?)),
        }
    }
}

/// Shannon entropy (nats) of each next-token distribution along the greedy
/// path starting at `prompt`.
pub fn entropy_profile(spec: &SamplerSpec, prompt: &[TokenId], horizon: usize) -> Result<Vec<f64>> {
    if !spec.is_mock() {
        return Err(Error::Unsupported("entropy profile needs a mock backend".into()));
    }
    let sampler = spec.build_mock()?;
    Ok(greedy_entropies(&sampler, prompt, horizon))
}

pub fn greedy_entropies(model: &dyn NextTokenModel, prompt: &[TokenId], horizon: usize) -> Vec<f64> {
    let mut ctx = prompt.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let p = model.next_token_probs(&ctx);
        out.push(shannon_entropy(&p));
        let next = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i as TokenId)
            .unwrap_or(0);
        ctx.push(next);
    }
    out
}

pub fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum()
}

pub(crate) fn check_vocab(v: usize) -> Result<()> {
    if v < 2 {
        return Err(invalid("vocabulary needs at least two tokens"));
    }
    if v > TokenId::MAX as usize {
        return Err(invalid("vocabulary too large for 32-bit token ids"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trips_and_rejects_unknown_fields() {
        let s = SamplerSpec::ZipfMock { vocab_size: 100, exponent: 1.0, rng_seed: 3 };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"backend":"zipf_mock","vocab_size":100,"exponent":1.0,"rng_seed":3}"#);
        assert_eq!(serde_json::from_str::<SamplerSpec>(&j).unwrap(), s);
        let bad = r#"{"backend":"uniform_mock","vocab_size":10,"temperature":0.7}"#;
        assert!(serde_json::from_str::<SamplerSpec>(bad).is_err());
    }

    #[test]
    fn entropy_profile_rejects_black_boxes() {
        let s = SamplerSpec::Http {
            url: "http://127.0.0.1:1/".into(),
            max_in_flight: 1,
            timeout_ms: None,
            retry: RetryPolicy::default(),
        };
        assert!(matches!(entropy_profile(&s, &[], 3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn uniform_entropy_is_log_v() {
        let s = SamplerSpec::UniformMock { vocab_size: 37, rng_seed: 0 };
        for h in entropy_profile(&s, &[1, 2], 5).unwrap() {
            assert!((h - 37f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zipf_entropy_matches_direct_sum() {
        let s = SamplerSpec::ZipfMock { vocab_size: 100, exponent: 1.0, rng_seed: 0 };
        let z: f64 = (1..=100).map(|i| 1.0 / i as f64).sum();
        let want: f64 = (1..=100).map(|i| {
            let p = 1.0 / (i as f64 * z);
            -p * p.ln()
        }).sum();
        let got = entropy_profile(&s, &[], 3).unwrap();
        assert!(got.iter().all(|h| (h - want).abs() < 1e-12));
    }

    #[test]
    fn deterministic_markov_has_zero_entropy() {
        let s = SamplerSpec::MarkovMock { vocab_size: 50, sharpness: f64::INFINITY, transition_seed: 4, rng_seed: 0 };
        assert!(entropy_profile(&s, &[3], 10).unwrap().iter().all(|&h| h == 0.0));
    }
}
