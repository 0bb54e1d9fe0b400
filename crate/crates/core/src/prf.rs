//! Pseudorandom function over n-grams: `g(w) = F[h(K | w)]`.
//!
//! # Canonical hash encoding
//!
//! The seed of an n-gram `w = (w₁, …, w_l)` under key `K` is the first eight
//! bytes, read big-endian, of
//!
//! ```text
//! SHA-256( K as u64 BE (8 bytes) ‖ l as u32 BE (4 bytes) ‖ w₁ as u32 BE ‖ … ‖ w_l as u32 BE )
//! ```
//!
//! Encoder and detector must agree on this byte layout, so it is fixed here
//! and covered by a golden vector in the tests. Example: `K = 1`,
//! `w = [1, 2, 3]` hashes the 24 bytes
//! `00000000 00000001 00000003 00000001 00000002 00000003` and yields the seed
//! `0x30c0d815b5af0b9f`.
//!
//! A seed becomes a uniform draw by taking its top 53 bits divided by 2⁵³,
//! which lands in `[0, 1)`; the draw for family `F` is `F⁻¹` of that uniform.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::ScoreDistribution;

pub type TokenId = u32;
pub type SecretKey = u64;

/// 64-bit PRF seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Top 53 bits mapped to `[0, 1)`.
    pub fn unit(self) -> f64 {
        (self.0 >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// n-gram windows for the positions `first..tokens.len()`.
///
/// The window ending at position `i` is `tokens[max(floor, i + 1 - n) ..= i]`:
/// tokens before `floor` never serve as context, while tokens in
/// `floor..first` act as left context without producing windows of their own.
pub fn ngram_windows(tokens: &[TokenId], n: usize, floor: usize, first: usize) -> Vec<&[TokenId]> {
    assert!(n >= 1, "n-gram length must be at least 1");
    assert!(floor <= first && first <= tokens.len(), "bad window bounds");
    (first..tokens.len())
        .map(|i| {
            let start = floor.max((i + 1).saturating_sub(n));
            &tokens[start..=i]
        })
        .collect()
}

/// n-grams of the content after a prompt of `prefix_len` tokens. Prompt tokens
/// are excluded both as positions and as left context.
pub fn extract_ngrams(tokens: &[TokenId], n: usize, prefix_len: usize) -> Vec<&[TokenId]> {
    ngram_windows(tokens, n, prefix_len, prefix_len)
}

/// Canonical byte encoding of `(key, w)` fed to SHA-256.
pub fn encode_ngram(key: SecretKey, w: &[TokenId]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 4 * w.len());
    buf.extend_from_slice(&key.to_be_bytes());
    buf.extend_from_slice(&(w.len() as u32).to_be_bytes());
    for t in w {
        buf.extend_from_slice(&t.to_be_bytes());
    }
    buf
}

pub fn hash_ngram(key: SecretKey, w: &[TokenId]) -> Seed {
    let mut hasher = Sha256::new();
    hasher.update(key.to_be_bytes());
    hasher.update((w.len() as u32).to_be_bytes());
    for t in w {
        hasher.update(t.to_be_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    Seed(u64::from_be_bytes(head))
}

/// One pseudorandom draw from `dist` determined entirely by `seed`.
pub fn prf_draw(dist: &ScoreDistribution, seed: Seed) -> f64 {
    match dist {
        ScoreDistribution::Uniform01 => seed.unit(),
        _ => dist.inverse_cdf(seed.unit()),
    }
}
