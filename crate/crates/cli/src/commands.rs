use std::io::{BufRead, Write};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use rand::RngCore;
use serde::Serialize;
use serde_json::{json, Value};
use seqmark::baselines::{aaronson_score, kirchenbauer_score, AaronsonVariant, KirchenbauerConfig};
use seqmark::harness::{
    attack_replace, distortion_sim, end_to_end_bench, gamma_rate_curves, idealized_gamma_sim, lambda, simulate_alpha,
    theorem2_bound, theorem2_limit, trial_rng, BoundParams, Scenario, VocabLaw,
};
use seqmark::{
    detect, detect_fisher, detect_lrt_gamma, detect_lrt_kde, detect_recursive, estimate_f0, estimate_f1, watermark,
    DensityEstimate, DetectionReport, GammaLrtParams, Method, SamplerSpec, ScoreDistribution, SequenceSampler,
    TokenId,
};

use crate::config::{ResolvedDetect, RunConfig, WatermarkSection};
use crate::records::{process, PromptRecord, ReportOut, TokensOut, TokensRecord};

/// Stream offset for the attack RNG so it never shares draws with encoding.
const ATTACK_STREAM: u64 = 0xa77a_c4;

/// A result document together with everything needed to reproduce it.
#[derive(Debug, Serialize)]
pub struct Artifact<T: Serialize> {
    pub command: String,
    pub config: Value,
    pub result: T,
}

impl<T: Serialize> Artifact<T> {
    pub fn new(command: &str, config: impl Serialize, result: T) -> Result<Self> {
        Ok(Self { command: command.into(), config: serde_json::to_value(config)?, result })
    }

    pub fn write(&self, out: &mut dyn Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut *out, self)?;
        writeln!(out)?;
        Ok(())
    }
}

/// Returns the number of failed records.
pub fn cmd_watermark(cfg: &RunConfig, keys: &[u64], input: impl BufRead, output: impl Write) -> Result<usize> {
    let section: &WatermarkSection = &cfg.watermark;
    // Validate (including the m^t budget) before any sampling.
    section.to_config(keys.to_vec(), 0).validate()?;
    let spec = cfg.sampler();
    let shared: Option<Arc<dyn SequenceSampler>> = if spec.is_mock() { None } else { Some(spec.build()?) };
    if spec.is_mock() {
        spec.build_mock()?;
    }
    log::info!("watermarking with {} key(s), m={}, k={}", keys.len(), section.m, section.k);
    process(input, output, |i, rec: PromptRecord| {
        // Mock samplers are rebuilt per record so outputs do not depend on scheduling.
        let mut rng = trial_rng(cfg.rng_seed, i as u64);
        let sampler_seed = rng.next_u64();
        let wcfg = section.to_config(keys.to_vec(), rng.next_u64());
        let tokens = match &shared {
            Some(s) => watermark(&wcfg, &rec.prompt, s)?,
            None => watermark(&wcfg, &rec.prompt, &spec.with_rng_seed(sampler_seed).build_mock()?)?,
        };
        Ok(TokensOut { id: rec.id, tokens })
    })
}

/// Method dispatch with the fitted pieces some detectors need.
pub struct Detector {
    cfg: ResolvedDetect,
    lrt: Option<GammaLrtParams>,
    kde: Option<(DensityEstimate, DensityEstimate)>,
}

impl Detector {
    pub fn new(cfg: ResolvedDetect) -> Result<Self> {
        let lrt = match (cfg.method, cfg.dist) {
            (Method::LrtGamma, ScoreDistribution::NegGamma { k, beta }) => Some(GammaLrtParams::new(k, cfg.m as u32, beta)?),
            _ => None,
        };
        let kde = if cfg.method == Method::LrtKde {
            let f0 = estimate_f0(&cfg.dist, cfg.kde_samples, cfg.rng_seed ^ 0xf0)?;
            let f1 = estimate_f1(&cfg.dist, cfg.k, cfg.m, cfg.kde_samples, cfg.rng_seed ^ 0xf1)?;
            Some((f0, f1))
        } else {
            None
        };
        Ok(Self { cfg, lrt, kde })
    }

    pub fn run(&self, tokens: &[TokenId], keys: &[u64]) -> Result<DetectionReport> {
        let (c, key) = (&self.cfg, keys[0]);
        Ok(match c.method {
            Method::Sum => detect(&c.dist, tokens, key, c.n)?,
            Method::Fisher => detect_fisher(&c.dist, tokens, key, c.n)?,
            Method::Recursive => detect_recursive(&c.dist, tokens, keys, c.n)?,
            Method::LrtGamma => detect_lrt_gamma(&c.dist, self.lrt.as_ref().expect("fitted"), tokens, key, c.n)?,
            Method::LrtKde => {
                let (f0, f1) = self.kde.as_ref().expect("fitted");
                detect_lrt_kde(&c.dist, f0, f1, tokens, key, c.n)?
            }
            Method::Aaronson => aaronson_score(tokens, key, c.n, AaronsonVariant::Raw)?,
            Method::AaronsonFisher => aaronson_score(tokens, key, c.n, AaronsonVariant::FisherCorrected)?,
            Method::AaronsonSum => aaronson_score(tokens, key, c.n, AaronsonVariant::SumCorrected)?,
            Method::Kirchenbauer => {
                let kb = c.kirchenbauer.expect("checked at resolve time");
                let cfg = KirchenbauerConfig { gamma: kb.gamma, delta: kb.delta, n: c.n, key };
                kirchenbauer_score(tokens, &cfg, c.vocab_size.expect("checked at resolve time"))?
            }
        })
    }
}

/// Returns the number of failed records.
pub fn cmd_detect(cfg: &RunConfig, keys: &[u64], input: impl BufRead, output: impl Write) -> Result<usize> {
    let resolved = cfg.resolve_detect()?;
    if resolved.method != Method::Recursive && keys.len() > 1 {
        log::warn!("{} uses only the first of {} keys", resolved.method, keys.len());
    }
    let attack = resolved.attack.map(|a| (a.pct, resolved.vocab_size.expect("checked at resolve time")));
    let det = Detector::new(resolved)?;
    process(input, output, |i, rec: TokensRecord| {
        let tokens = match attack {
            Some((pct, vocab)) if pct > 0.0 => {
                attack_replace(&rec.tokens, pct, vocab, &mut trial_rng(cfg.rng_seed ^ ATTACK_STREAM, i as u64))?
            }
            _ => rec.tokens,
        };
        Ok(ReportOut { id: rec.id, report: det.run(&tokens, keys)? })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    DummyLmFlat,
    DummyLmRecursive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

pub fn cmd_bench(cfg: &RunConfig, preset: Option<Preset>, trials: Option<usize>, format: Format, out: &mut dyn Write) -> Result<()> {
    let mut s = match (preset, &cfg.bench) {
        (Some(Preset::DummyLmFlat), _) | (None, None) => Scenario::dummy_lm_flat(),
        (Some(Preset::DummyLmRecursive), _) => Scenario::dummy_lm_recursive(),
        (None, Some(s)) => s.clone(),
    };
    if let Some(t) = trials {
        s.trials = t;
    }
    if cfg.rng_seed != 0 {
        s.rng_seed = cfg.rng_seed;
    }
    let report = end_to_end_bench(&s)?;
    match format {
        Format::Json => Artifact::new("bench", &s, &report)?.write(out)?,
        Format::Table => write!(out, "# config: {}\n{}", serde_json::to_string(&s)?, report.render_table())?,
        Format::Csv => write!(out, "# config: {}\n{}", serde_json::to_string(&s)?, report.to_csv())?,
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Law {
    Uniform,
    Zipf,
}

pub fn vocab_law(law: Law, vocab_size: usize, exponent: f64) -> VocabLaw {
    match law {
        Law::Uniform => VocabLaw::Uniform { vocab_size },
        Law::Zipf => VocabLaw::Zipf { vocab_size, exponent },
    }
}

pub fn cmd_simulate_alpha(law: VocabLaw, ms: &[usize], trials: usize, rng_seed: u64, out: &mut dyn Write) -> Result<()> {
    let rows = ms
        .iter()
        .map(|&m| Ok(json!({ "m": m, "alpha": simulate_alpha(&law, m, trials, rng_seed)?, "ln_m": (m as f64).ln() })))
        .collect::<Result<Vec<_>>>()?;
    let config = json!({ "law": law, "m": ms, "trials": trials, "rng_seed": rng_seed });
    Artifact::new("simulate alpha", config, rows)?.write(out)
}

pub struct GammaArgs {
    pub k: u32,
    pub m: u32,
    pub beta: f64,
    pub t: Vec<usize>,
    pub fpr: Vec<f64>,
    pub mc_trials: Option<usize>,
}

pub fn cmd_simulate_gamma(a: &GammaArgs, rng_seed: u64, out: &mut dyn Write) -> Result<()> {
    let curves = gamma_rate_curves(a.k, a.m, a.beta, &a.t, &a.fpr)?;
    let idealized = match a.mc_trials {
        Some(trials) => a
            .t
            .iter()
            .map(|&t| Ok(json!({ "t": t, "rows": idealized_gamma_sim(a.k, a.m, a.beta, t, trials, &a.fpr, rng_seed)? })))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let config = json!({
        "k": a.k, "m": a.m, "beta": a.beta, "t": a.t, "fpr": a.fpr, "mc_trials": a.mc_trials, "rng_seed": rng_seed,
    });
    Artifact::new("simulate gamma", config, json!({ "curves": curves, "idealized": idealized }))?.write(out)
}

pub struct DistortionArgs {
    pub m: usize,
    pub k: usize,
    pub max_len: usize,
    pub n: usize,
    pub runs: u64,
    pub fixed_key: bool,
}

pub fn cmd_simulate_distortion(cfg: &RunConfig, keys: Option<&[u64]>, a: &DistortionArgs, out: &mut dyn Write) -> Result<()> {
    let spec = cfg
        .sampler
        .clone()
        .unwrap_or(SamplerSpec::MarkovMock { vocab_size: 5, sharpness: 1.5, transition_seed: 7, rng_seed: 0 });
    if !spec.is_mock() {
        bail!("the distortion simulation needs a mock sampler");
    }
    let keys = match (a.fixed_key, keys) {
        (true, Some(k)) => k.to_vec(),
        (true, None) => bail!("--fixed-key needs a secret key"),
        // Placeholder keys; each run draws its own.
        (false, _) => vec![0],
    };
    let section = WatermarkSection { m: a.m, k: a.k, max_len: a.max_len, n: a.n, ..cfg.watermark.clone() };
    let wcfg = section.to_config(keys, cfg.rng_seed);
    let report = distortion_sim(&spec, &wcfg, !a.fixed_key, a.runs, cfg.rng_seed)?;
    let config = json!({
        "sampler": spec, "watermark": section, "runs": a.runs, "fresh_keys": !a.fixed_key, "rng_seed": cfg.rng_seed,
    });
    Artifact::new("simulate distortion", config, report)?.write(out)
}

pub fn cmd_simulate_dummy_lm(trials: Option<usize>, rng_seed: u64, out: &mut dyn Write) -> Result<()> {
    let mut result = Vec::new();
    let mut config = Vec::new();
    for (mut s, method) in [(Scenario::dummy_lm_flat(), Method::Sum), (Scenario::dummy_lm_recursive(), Method::Recursive)] {
        if let Some(t) = trials {
            s.trials = t;
        }
        s.rng_seed = rng_seed;
        let r = end_to_end_bench(&s)?;
        let cell = r.cell(method, Some(s.max_len)).context("missing cell")?;
        result.push(json!({ "scenario": s.name, "method": method, "auc": cell.auc, "pauc": cell.pauc }));
        config.push(s);
    }
    Artifact::new("simulate dummy-lm", config, result)?.write(out)
}

pub fn cmd_bound(params: BoundParams, alpha_source: Value, out: &mut dyn Write) -> Result<()> {
    let bound = theorem2_bound(&params)?;
    let result = json!({ "bound": bound, "limit": theorem2_limit(params.t), "lambda": lambda(params.m) });
    let config = json!({ "m": params.m, "t": params.t, "alpha": params.alpha, "alpha_source": alpha_source });
    Artifact::new("bound", config, result)?.write(out)
}
