//! HTTP adapter: one `POST` per sampled sequence.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::{check_response, RetryPolicy, SampleRequest, SampleResponse, SequenceSampler};
use crate::error::{invalid, Result, SamplerError};
use crate::prf::TokenId;

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct HttpSampler {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    gate: Gate,
}

impl HttpSampler {
    pub fn new(url: String, max_in_flight: usize, timeout: Option<Duration>, retry: RetryPolicy) -> Result<Self> {
        if max_in_flight == 0 {
            return Err(invalid("max_in_flight must be at least 1"));
        }
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(invalid(format!("not an http(s) url: {url}")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(timeout)
            .build()
            .into();
        Ok(Self { url, agent, retry, gate: Gate { free: Mutex::new(max_in_flight), cv: Condvar::new() } })
    }

    fn attempt(&self, req: &SampleRequest) -> Result<Vec<TokenId>, SamplerError> {
        let _slot = self.gate.enter();
        let mut resp = self.agent.post(&self.url).send_json(req).map_err(classify)?;
        let body: SampleResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| SamplerError::Transport(format!("malformed response body: {e}")))?;
        Ok(body.tokens)
    }
}

fn classify(e: ureq::Error) -> SamplerError {
    match e {
        // Client errors will not change on retry.
        ureq::Error::StatusCode(code) if (400..500).contains(&code) && code != 429 => {
            SamplerError::Protocol(format!("http status {code}"))
        }
        other => SamplerError::Transport(other.to_string()),
    }
}

impl SequenceSampler for HttpSampler {
    fn sample(&self, prompt: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>, SamplerError> {
        let req = SampleRequest { prompt: prompt.to_vec(), max_tokens };
        let tokens = self.retry.run(|| self.attempt(&req))?;
        check_response(tokens, max_tokens)
    }
}
