//! White-box comparison schemes: Aaronson's Gumbel-max watermark (with raw and
//! corrected detection scores) and Kirchenbauer's green-list watermark.
//!
//! Both need the next-token distribution, so they run against
//! [`NextTokenModel`] implementors only.
//!
//! # Green-list permutation
//!
//! For context `w` the vocabulary permutation is produced by a Fisher–Yates
//! shuffle of `[0, 1, …, V−1]` driven by SplitMix64 seeded with
//! `hash_ngram(key, w)`: for `i` from `V−1` down to `1`, draw `x = next()`,
//! set `j = x mod (i + 1)`, swap positions `i` and `j`. The green list is the
//! first `⌊γV⌋` entries. SplitMix64 `next()` is
//!
//! ```text
//! state += 0x9e3779b97f4a7c15
//! z = state
//! z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//! z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//! return z ^ (z >> 31)
//! ```
//!
//! with wrapping arithmetic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{unique_ngrams, DetectionReport, Method, OPEN_INTERVAL_NUDGE};
use crate::dist::special::ln_reg_gamma_pair;
use crate::dist::ScoreDistribution;
use crate::error::{invalid, Error, Result};
use crate::prf::{hash_ngram, SecretKey, TokenId};
use crate::sampler::NextTokenModel;

/// Last `n − 1` generated tokens, the context hashed at the next position.
pub fn context_window(generated: &[TokenId], n: usize) -> &[TokenId] {
    &generated[generated.len().saturating_sub(n.saturating_sub(1))..]
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(invalid("empty next-token distribution"));
    }
    if p.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
        return Err(invalid("next-token probabilities must be finite and non-negative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("next-token probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// Uniform PRF value for candidate token `i` after context `w`.
fn token_unit(key: SecretKey, w: &[TokenId], i: TokenId) -> f64 {
    let mut gram = Vec::with_capacity(w.len() + 1);
    gram.extend_from_slice(w);
    gram.push(i);
    hash_ngram(key, &gram).unit()
}

/// `argmax_i ln(uᵢ) / pᵢ` over tokens with `pᵢ > 0`.
pub fn aaronson_select(p: &[f64], context: &[TokenId], key: SecretKey) -> Result<TokenId> {
    check_probs(p)?;
    let mut best = None;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        let u = token_unit(key, context, i as TokenId).max(f64::MIN_POSITIVE);
        let v = u.ln() / pi;
        if best.is_none() || v > best_val {
            best = Some(i as TokenId);
            best_val = v;
        }
    }
    best.ok_or_else(|| invalid("distribution has no support"))
}

pub fn aaronson_generate(
    model: &dyn NextTokenModel,
    prompt: &[TokenId],
    key: SecretKey,
    n: usize,
    len: usize,
) -> Result<Vec<TokenId>> {
    let mut full = prompt.to_vec();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let p = model.next_token_probs(&full);
        let tok = aaronson_select(&p, context_window(&out, n), key)?;
        out.push(tok);
        full.push(tok);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AaronsonVariant {
    /// `s_A = −Σ ln(1 − Rᵢ)`, no p-value.
    Raw,
    /// Score `χ²₂ₜ CDF(2 s_A)`, p-value its complement.
    FisherCorrected,
    /// Irwin–Hall sum test on the same values.
    SumCorrected,
}

impl AaronsonVariant {
    pub fn method(self) -> Method {
        match self {
            AaronsonVariant::Raw => Method::Aaronson,
            AaronsonVariant::FisherCorrected => Method::AaronsonFisher,
            AaronsonVariant::SumCorrected => Method::AaronsonSum,
        }
    }
}

/// Aaronson detection score over the unique n-grams of `tokens`.
pub fn aaronson_score(tokens: &[TokenId], key: SecretKey, n: usize, variant: AaronsonVariant) -> Result<DetectionReport> {
    if tokens.is_empty() {
        return Err(Error::Degenerate("cannot detect on an empty token sequence".into()));
    }
    let rs: Vec<f64> = unique_ngrams(tokens, n).into_iter().map(|w| hash_ngram(key, w).unit()).collect();
    aaronson_test(&rs, variant)
}

/// Aaronson detection on given uniform PRF values.
pub fn aaronson_test(rs: &[f64], variant: AaronsonVariant) -> Result<DetectionReport> {
    if rs.is_empty() {
        return Err(Error::Degenerate("no PRF values to score".into()));
    }
    let t = rs.len();
    let s_a: f64 = rs
        .iter()
        .map(|&r| -(-r.clamp(0.0, 1.0 - OPEN_INTERVAL_NUDGE)).ln_1p())
        .sum();
    Ok(match variant {
        AaronsonVariant::Raw => DetectionReport::score_only(Method::Aaronson, s_a, t),
        AaronsonVariant::FisherCorrected => {
            // 2 s_A ~ χ²₂ₜ = Gamma(T, 1/2) under the null.
            let (lc, ls) = ln_reg_gamma_pair(t as f64, s_a);
            DetectionReport::with_p(Method::AaronsonFisher, lc.exp(), ls, t)
        }
        AaronsonVariant::SumCorrected => {
            let mut r = crate::detector::sum_test(&ScoreDistribution::Uniform01, rs)?;
            r.method = Method::AaronsonSum;
            r
        }
    })
}

/// Pinned SplitMix64 generator (see module docs).
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KirchenbauerConfig {
    pub gamma: f64,
    pub delta: f64,
    pub n: usize,
    pub key: SecretKey,
}

impl KirchenbauerConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma must lie in (0, 1)"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta must be finite and non-negative"));
        }
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        let g = self.green_size(vocab);
        if g == 0 || g >= vocab {
            return Err(invalid(format!("green list size {g} must lie in 1..{vocab}")));
        }
        Ok(())
    }

    /// `⌊γV⌋`.
    pub fn green_size(&self, vocab: usize) -> usize {
        (self.gamma * vocab as f64).floor() as usize
    }

    /// Green fraction actually realized, `⌊γV⌋ / V`.
    pub fn effective_gamma(&self, vocab: usize) -> f64 {
        self.green_size(vocab) as f64 / vocab as f64
    }
}

/// Vocabulary permutation for `context`; the green list is its head.
pub fn vocab_permutation(key: SecretKey, context: &[TokenId], vocab: usize) -> Vec<TokenId> {
    let mut perm: Vec<TokenId> = (0..vocab as TokenId).collect();
    let mut g = SplitMix64::new(hash_ngram(key, context).0);
    for i in (1..vocab).rev() {
        let j = (g.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Membership mask of the green list for `context`.
pub fn green_mask(cfg: &KirchenbauerConfig, context: &[TokenId], vocab: usize) -> Vec<bool> {
    let perm = vocab_permutation(cfg.key, context, vocab);
    let mut mask = vec![false; vocab];
    for &t in &perm[..cfg.green_size(vocab)] {
        mask[t as usize] = true;
    }
    mask
}

/// Add `δ` to green logits and sample from the softmax.
pub fn kirchenbauer_select<R: Rng + ?Sized>(
    logits: &[f64],
    cfg: &KirchenbauerConfig,
    context: &[TokenId],
    rng: &mut R,
) -> Result<TokenId> {
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(invalid("logits must be finite or −∞"));
    }
    let vocab = logits.len();
    cfg.validate(vocab)?;
    let mask = green_mask(cfg, context, vocab);
    let biased: Vec<f64> = logits.iter().zip(&mask).map(|(&l, &g)| if g { l + cfg.delta } else { l }).collect();
    let top = biased.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(invalid("all logits are −∞"));
    }
    let w: Vec<f64> = biased.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return Ok(i as TokenId);
        }
        u -= wi;
    }
    Ok(w.iter().rposition(|&x| x > 0.0).unwrap_or(0) as TokenId)
}

pub fn kirchenbauer_generate<R: Rng + ?Sized>(
    model: &dyn NextTokenModel,
    prompt: &[TokenId],
    cfg: &KirchenbauerConfig,
    len: usize,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    let mut full = prompt.to_vec();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let logits: Vec<f64> = model.next_token_probs(&full).iter().map(|p| p.ln()).collect();
        let tok = kirchenbauer_select(&logits, cfg, context_window(&out, cfg.n), rng)?;
        out.push(tok);
        full.push(tok);
    }
    Ok(out)
}

/// Green n-grams and unique n-grams of `tokens` (current token included).
pub fn kirchenbauer_green_count(tokens: &[TokenId], cfg: &KirchenbauerConfig, vocab: usize) -> Result<(usize, usize)> {
    cfg.validate(vocab)?;
    if tokens.is_empty() {
        return Err(Error::Degenerate("cannot detect on an empty token sequence".into()));
    }
    if let Some(t) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(invalid(format!("token {t} outside vocabulary of size {vocab}")));
    }
    let grams = unique_ngrams(tokens, cfg.n);
    let green = grams
        .iter()
        .filter(|w| {
            let (ctx, cur) = w.split_at(w.len() - 1);
            green_mask(cfg, ctx, vocab)[cur[0] as usize]
        })
        .count();
    Ok((green, grams.len()))
}

/// z-score `(T_g − γT) / √(Tγ(1 − γ))` over unique n-grams, with γ the
/// effective green fraction.
pub fn kirchenbauer_score(tokens: &[TokenId], cfg: &KirchenbauerConfig, vocab: usize) -> Result<DetectionReport> {
    let (green, t) = kirchenbauer_green_count(tokens, cfg, vocab)?;
    let g = cfg.effective_gamma(vocab);
    let z = (green as f64 - g * t as f64) / (t as f64 * g * (1.0 - g)).sqrt();
    Ok(DetectionReport::score_only(Method::Kirchenbauer, z, t))
}
