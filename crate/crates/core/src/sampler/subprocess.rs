//! Line-delimited JSON adapter for a local child process acting as the black box.
//!
//! Up to `max_in_flight` children are spawned lazily; each serves one request
//! at a time. A child that fails a request is discarded and a fresh one is
//! spawned on retry.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Condvar, Mutex};

use super::{check_response, RetryPolicy, SampleRequest, SampleResponse, SequenceSampler};
use crate::error::{invalid, Result, SamplerError};
use crate::prf::TokenId;

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Self, SamplerError> {
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SamplerError::Transport(format!("spawn {:?}: {e}", command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout })
    }

    fn request(&mut self, req: &SampleRequest) -> Result<Vec<TokenId>, SamplerError> {
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| SamplerError::Transport(format!("write to child: {e}")))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| SamplerError::Transport(format!("read from child: {e}")))?;
        if n == 0 {
            return Err(SamplerError::Transport("child closed its stdout".into()));
        }
        let resp: SampleResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| SamplerError::Transport(format!("malformed reply {reply:?}: {e}")))?;
        Ok(resp.tokens)
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Pool {
    idle: Vec<Worker>,
    live: usize,
}

pub struct SubprocessSampler {
    command: Vec<String>,
    max_in_flight: usize,
    retry: RetryPolicy,
    pool: Mutex<Pool>,
    freed: Condvar,
}

impl std::fmt::Debug for SubprocessSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessSampler")
            .field("command", &self.command)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl SubprocessSampler {
    pub fn new(command: Vec<String>, max_in_flight: usize, retry: RetryPolicy) -> Result<Self> {
        if command.is_empty() {
            return Err(invalid("subprocess command is empty"));
        }
        if max_in_flight == 0 {
            return Err(invalid("max_in_flight must be at least 1"));
        }
        Ok(Self {
            command,
            max_in_flight,
            retry,
            pool: Mutex::new(Pool { idle: Vec::new(), live: 0 }),
            freed: Condvar::new(),
        })
    }

    fn acquire(&self) -> Result<Worker, SamplerError> {
        let mut pool = self.pool.lock().unwrap();
        loop {
            if let Some(w) = pool.idle.pop() {
                return Ok(w);
            }
            if pool.live < self.max_in_flight {
                pool.live += 1;
                drop(pool);
                return Worker::spawn(&self.command).inspect_err(|_| {
                    self.pool.lock().unwrap().live -= 1;
                    self.freed.notify_one();
                });
            }
            pool = self.freed.wait(pool).unwrap();
        }
    }

    fn release(&self, worker: Option<Worker>) {
        let mut pool = self.pool.lock().unwrap();
        match worker {
            Some(w) => pool.idle.push(w),
            None => pool.live -= 1,
        }
        drop(pool);
        self.freed.notify_one();
    }

    fn attempt(&self, req: &SampleRequest) -> Result<Vec<TokenId>, SamplerError> {
        let mut worker = self.acquire()?;
        match worker.request(req) {
            Ok(tokens) => {
                self.release(Some(worker));
                Ok(tokens)
            }
            Err(e) => {
                drop(worker);
                self.release(None);
                Err(e)
            }
        }
    }
}

impl SequenceSampler for SubprocessSampler {
    fn sample(&self, prompt: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>, SamplerError> {
        let req = SampleRequest { prompt: prompt.to_vec(), max_tokens };
        let tokens = self.retry.run(|| self.attempt(&req))?;
        check_response(tokens, max_tokens)
    }
}
