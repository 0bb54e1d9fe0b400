//! Random token replacement.

use rand::seq::index;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::prf::TokenId;

/// Replace `⌊pct · len / 100⌋` positions, chosen uniformly without replacement,
/// each by a uniform draw over the other `V − 1` tokens.
pub fn attack_replace<R: Rng + ?Sized>(tokens: &[TokenId], pct: f64, vocab: usize, rng: &mut R) -> Result<Vec<TokenId>> {
    if !(0.0..=100.0).contains(&pct) {
        return Err(invalid("attack percentage must lie in [0, 100]"));
    }
    if vocab < 2 {
        return Err(invalid("replacement needs a vocabulary of at least two tokens"));
    }
    if let Some(t) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(invalid(format!("token {t} outside vocabulary of size {vocab}")));
    }
    let count = (pct * tokens.len() as f64 / 100.0).floor() as usize;
    let mut out = tokens.to_vec();
    for pos in index::sample(rng, tokens.len(), count) {
        let orig = out[pos];
        let r = rng.random_range(0..(vocab - 1) as TokenId);
        out[pos] = if r >= orig { r + 1 } else { r };
    }
    Ok(out)
}
