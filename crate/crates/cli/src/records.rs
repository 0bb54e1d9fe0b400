//! JSON-lines plumbing: records are processed in parallel and written in
//! input order.

use std::io::{BufRead, Write};

use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use seqmark::{DetectionReport, TokenId};

/// Lines buffered per parallel batch.
const BATCH: usize = 512;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRecord {
    pub id: Value,
    #[serde(default)]
    pub prompt: Vec<TokenId>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokensRecord {
    pub id: Value,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Serialize)]
pub struct TokensOut {
    pub id: Value,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Serialize)]
pub struct ReportOut {
    pub id: Value,
    #[serde(flatten)]
    pub report: DetectionReport,
}

#[derive(Debug, Serialize)]
struct ErrorOut {
    id: Value,
    line: usize,
    error: String,
}

/// Parse each non-blank line as `In`, run `f(line_index, record)` and write
/// one JSON object per line. Returns the number of failed records.
pub fn process<In, Out, F>(input: impl BufRead, mut output: impl Write, f: F) -> Result<usize>
where
    In: for<'de> Deserialize<'de> + Send,
    Out: Serialize + Send,
    F: Fn(usize, In) -> Result<Out> + Sync,
{
    let mut failed = 0;
    let mut batch: Vec<(usize, String)> = Vec::with_capacity(BATCH);
    let mut lines = input.lines().enumerate();
    loop {
        batch.clear();
        for (i, line) in lines.by_ref() {
            let line = line?;
            if !line.trim().is_empty() {
                batch.push((i, line));
                if batch.len() == BATCH {
                    break;
                }
            }
        }
        if batch.is_empty() {
            break;
        }
        let out: Vec<std::result::Result<String, String>> = batch
            .par_iter()
            .map(|(i, line)| {
                let id = serde_json::from_str::<Value>(line).ok().and_then(|v| v.get("id").cloned()).unwrap_or(Value::Null);
                let res = serde_json::from_str::<In>(line)
                    .map_err(anyhow::Error::from)
                    .and_then(|rec| f(*i, rec))
                    .and_then(|o| Ok(serde_json::to_string(&o)?));
                res.map_err(|e| {
                    log::warn!("line {}: {e:#}", i + 1);
                    serde_json::to_string(&ErrorOut { id, line: i + 1, error: format!("{e:#}") }).expect("serializable")
                })
            })
            .collect();
        for o in out {
            match o {
                Ok(s) => writeln!(output, "{s}")?,
                Err(s) => {
                    failed += 1;
                    writeln!(output, "{s}")?;
                }
            }
        }
        output.flush()?;
    }
    Ok(failed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order_and_reports_bad_lines() {
        let input = (0..1200).map(|i| format!("{{\"id\": {i}, \"tokens\": [{i}]}}\n")).collect::<String>() + "not json\n\n{\"id\": \"x\"}\n";
        let mut out = Vec::new();
        let failed = process(input.as_bytes(), &mut out, |_, r: TokensRecord| {
            Ok(TokensOut { id: r.id, tokens: r.tokens.iter().map(|t| t + 1).collect() })
        })
        .unwrap();
        assert_eq!(failed, 2);
        let lines: Vec<Value> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 1202);
        for (i, l) in lines[..1200].iter().enumerate() {
            assert_eq!(l["id"], i);
            assert_eq!(l["tokens"][0], i + 1);
        }
        assert_eq!(lines[1200]["line"], 1201);
        assert_eq!(lines[1201]["id"], "x");
        assert!(lines[1201]["error"].as_str().unwrap().contains("tokens"));
    }
}
