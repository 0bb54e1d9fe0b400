//! TOML run configuration. Every section is optional and command-line flags
//! override file values; the resolved result is what artifacts embed.

use std::path::Path;

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use seqmark::encoder::DEFAULT_FANOUT_BUDGET;
use seqmark::harness::Scenario;
use seqmark::{Method, SamplerSpec, ScoreDistribution, WatermarkConfig};

pub const DEFAULT_N: usize = 4;
pub const DEFAULT_KDE_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub rng_seed: u64,
    /// Backend for `watermark` and `simulate distortion`.
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub watermark: WatermarkSection,
    #[serde(default)]
    pub detect: DetectSection,
    /// Scenario for `bench`; the flat dummy-LM preset when absent.
    #[serde(default)]
    pub bench: Option<Scenario>,
    /// Where results go; standard output when absent.
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSection {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub dist: ScoreDistribution,
    #[serde(default = "default_budget")]
    pub fanout_budget: u64,
    #[serde(default)]
    pub parallel_sampling: bool,
}

impl Default for WatermarkSection {
    fn default() -> Self {
        Self {
            m: default_m(),
            k: default_k(),
            max_len: default_max_len(),
            n: DEFAULT_N,
            dist: ScoreDistribution::default(),
            fanout_budget: DEFAULT_FANOUT_BUDGET,
            parallel_sampling: false,
        }
    }
}

impl WatermarkSection {
    pub fn to_config(&self, keys: Vec<u64>, rng_seed: u64) -> WatermarkConfig {
        let mut cfg = WatermarkConfig::recursive(self.dist, keys, self.m, self.n, self.k, self.max_len);
        cfg.rng_seed = rng_seed;
        cfg.fanout_budget = self.fanout_budget;
        cfg.parallel_sampling = self.parallel_sampling;
        cfg
    }
}

/// Detection settings. `n`, `dist`, `m` and `k` fall back to the watermark
/// section so one file drives both directions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSection {
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub dist: Option<ScoreDistribution>,
    /// Fan-out used at encoding time (`lrt_gamma`, `lrt_kde`).
    #[serde(default)]
    pub m: Option<usize>,
    /// Chunk length used at encoding time (`lrt_kde`).
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub kde_samples: Option<usize>,
    #[serde(default)]
    pub kirchenbauer: Option<KirchenbauerSection>,
    /// Vocabulary size for `kirchenbauer` and for the attack.
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KirchenbauerSection {
    pub gamma: f64,
    #[serde(default)]
    pub delta: f64,
}

/// Random token replacement applied to each record before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub pct: f64,
}

/// Detection settings after defaults and fallbacks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedDetect {
    pub method: Method,
    pub n: usize,
    pub dist: ScoreDistribution,
    pub m: usize,
    pub k: usize,
    pub kde_samples: usize,
    pub kirchenbauer: Option<KirchenbauerSection>,
    pub vocab_size: Option<usize>,
    pub attack: Option<AttackSpec>,
    pub rng_seed: u64,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn sampler(&self) -> SamplerSpec {
        self.sampler.clone().unwrap_or(SamplerSpec::UniformMock { vocab_size: 100, rng_seed: 0 })
    }

    pub fn resolve_detect(&self) -> Result<ResolvedDetect> {
        let d = &self.detect;
        let w = &self.watermark;
        let r = ResolvedDetect {
            method: d.method.unwrap_or(Method::Sum),
            n: d.n.unwrap_or(w.n),
            dist: d.dist.unwrap_or(w.dist),
            m: d.m.unwrap_or(w.m),
            k: d.k.unwrap_or(w.k),
            kde_samples: d.kde_samples.unwrap_or(DEFAULT_KDE_SAMPLES),
            kirchenbauer: d.kirchenbauer,
            vocab_size: d.vocab_size,
            attack: d.attack,
            rng_seed: self.rng_seed,
        };
        r.dist.validate()?;
        if r.n == 0 {
            bail!("n must be at least 1");
        }
        if let Some(a) = r.attack {
            if !(0.0..=100.0).contains(&a.pct) {
                bail!("attack pct must lie in [0, 100]");
            }
            if r.vocab_size.is_none() {
                bail!("an attack needs detect.vocab_size");
            }
        }
        match r.method {
            Method::LrtGamma if !matches!(r.dist, ScoreDistribution::NegGamma { .. }) => {
                bail!("lrt_gamma needs the neg_gamma distribution")
            }
            Method::Kirchenbauer if r.kirchenbauer.is_none() || r.vocab_size.is_none() => {
                bail!("kirchenbauer detection needs [detect.kirchenbauer] and detect.vocab_size")
            }
            _ => {}
        }
        Ok(r)
    }
}

/// Parse `uniform`, `normal`, `chisq2` or `neg_gamma:K:BETA`.
pub fn parse_dist(s: &str) -> Result<ScoreDistribution> {
    let norm = s.to_ascii_lowercase().replace('-', "_");
    let mut parts = norm.split(':');
    let d = match parts.next().unwrap_or_default() {
        "uniform" | "uniform01" => ScoreDistribution::Uniform01,
        "normal" | "std_normal" => ScoreDistribution::StdNormal,
        "chisq2" | "chi_sq2" => ScoreDistribution::ChiSq2,
        "neg_gamma" => {
            let k = parts.next().context("neg_gamma needs :K:BETA")?.parse().context("bad k")?;
            let beta = parts.next().map(str::parse).transpose().context("bad beta")?.unwrap_or(1.0);
            ScoreDistribution::neg_gamma(k, beta)?
        }
        other => bail!("unknown distribution {other:?}"),
    };
    if parts.next().is_some() {
        bail!("trailing fields in distribution {s:?}");
    }
    Ok(d)
}

fn default_m() -> usize {
    64
}

fn default_k() -> usize {
    20
}

fn default_max_len() -> usize {
    100
}

fn default_n() -> usize {
    DEFAULT_N
}

fn default_budget() -> u64 {
    DEFAULT_FANOUT_BUDGET
}
