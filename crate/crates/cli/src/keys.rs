//! Secret keys come from `SEQMARK_KEY` or a key file, never from argv.

use std::path::Path;

use anyhow::{bail, Context as _, Result};

pub const KEY_ENV: &str = "SEQMARK_KEY";

/// Keys from `file` when given, otherwise from the environment.
pub fn load_keys(file: Option<&Path>) -> Result<Vec<u64>> {
    let (text, source) = match file {
        Some(p) => (std::fs::read_to_string(p).with_context(|| format!("reading key file {}", p.display()))?, "key file"),
        None => match std::env::var(KEY_ENV) {
            Ok(v) => (v, KEY_ENV),
            Err(_) => bail!("no secret key: set {KEY_ENV} or pass --key-file"),
        },
    };
    parse_keys(&text).with_context(|| format!("parsing keys from {source}"))
}

/// Decimal or `0x` hex keys separated by commas or whitespace; `#` starts a comment.
pub fn parse_keys(text: &str) -> Result<Vec<u64>> {
    let mut keys = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or_default();
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let k = match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
                Some(hex) => u64::from_str_radix(hex, 16),
                None => tok.parse(),
            };
            // The token itself is deliberately left out of the message.
            keys.push(k.with_context(|| format!("key #{} is not a u64", keys.len() + 1))?);
        }
    }
    if keys.is_empty() {
        bail!("no keys found");
    }
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != keys.len() {
        bail!("keys must be pairwise distinct");
    }
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists() {
        assert_eq!(parse_keys("1,2, 3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_keys("# keys\n0xff\n42 # main\n").unwrap(), vec![255, 42]);
    }

    #[test]
    fn rejects_bad_input_without_echoing_it() {
        let err = format!("{:#}", parse_keys("12,secretish").unwrap_err());
        assert!(!err.contains("secretish"), "{err}");
        assert!(parse_keys(" , ").is_err());
        assert!(parse_keys("5,5").is_err());
    }
}
