//! `seqmark`: watermark, detect, benchmark and simulate from the command line.

mod commands;
mod config;
mod keys;
mod records;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use seqmark::harness::{simulate_alpha, BoundParams};
use seqmark::Method;

use commands::*;
use config::{parse_dist, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "seqmark", version, about = "Black-box sequence watermarking")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// File with secret keys (comma or whitespace separated). Without it
    /// keys are read from SEQMARK_KEY.
    #[arg(long, global = true)]
    key_file: Option<PathBuf>,
    /// Output path; standard output by default.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Overrides `rng_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read `{"id", "prompt"}` lines and write `{"id", "tokens"}` lines.
    Watermark {
        /// JSON-lines input; standard input by default.
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        scheme: SchemeFlags,
    },
    /// Read `{"id", "tokens"}` lines and write one detection report per line.
    Detect {
        #[arg(short, long)]
        input: Option<PathBuf>,
        /// sum, fisher, recursive, lrt_gamma, lrt_kde, aaronson, aaronson_fisher,
        /// aaronson_sum or kirchenbauer [default: sum]
        #[arg(long)]
        method: Option<Method>,
        /// n-gram length [default: 4]
        #[arg(long)]
        n: Option<usize>,
        /// uniform, normal, chisq2 or neg_gamma:K:BETA [default: uniform]
        #[arg(long, value_parser = parse_dist)]
        dist: Option<seqmark::ScoreDistribution>,
        /// Replace this percentage of tokens at random before scoring.
        #[arg(long)]
        attack_pct: Option<f64>,
        /// Vocabulary size for the attack and the kirchenbauer detector.
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Run an end-to-end benchmark scenario ([bench] in the config, or a preset).
    Bench {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Simulations behind the theory checks.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Lower bound on ROC-AUC for the flat scheme with k = 1 and uniform scores.
    Bound {
        #[arg(long)]
        m: u64,
        /// Number of unique test n-grams.
        #[arg(long)]
        t: u64,
        /// Entropy term in nats [default: ln m, or simulated with --law].
        #[arg(long, conflicts_with = "law")]
        alpha: Option<f64>,
        /// Simulate alpha from this vocabulary law.
        #[arg(long, value_enum)]
        law: Option<Law>,
        /// Vocabulary size for --law [default: 32000]
        #[arg(long, requires = "law")]
        v: Option<usize>,
        /// Zipf exponent for --law [default: 1.0]
        #[arg(long, requires = "law")]
        exponent: Option<f64>,
        /// Trials for --law [default: 2000]
        #[arg(long, requires = "law")]
        trials: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct SchemeFlags {
    /// Candidates per selection [default: 64]
    #[arg(long)]
    m: Option<usize>,
    /// Tokens per chunk [default: 20]
    #[arg(long)]
    k: Option<usize>,
    /// Token budget per generation [default: 100]
    #[arg(long)]
    max_len: Option<usize>,
    /// n-gram length [default: 4]
    #[arg(long)]
    n: Option<usize>,
    /// uniform, normal, chisq2 or neg_gamma:K:BETA [default: uniform]
    #[arg(long, value_parser = parse_dist)]
    dist: Option<seqmark::ScoreDistribution>,
}

#[derive(Subcommand, Debug)]
enum Simulate {
    /// Mean entropy α of m draws from a vocabulary law, against ln m.
    Alpha {
        #[arg(long, value_enum, default_value = "uniform")]
        law: Law,
        #[arg(long, default_value_t = 32_000)]
        v: usize,
        #[arg(long, default_value_t = 1.0)]
        exponent: f64,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64,128,256,512,1024")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 1_000)]
        trials: usize,
    },
    /// Closed-form Gamma LRT rates, optionally checked by the idealized Monte Carlo.
    Gamma {
        #[arg(long, default_value_t = 50)]
        k: u32,
        #[arg(long, default_value_t = 64)]
        m: u32,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
        t: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.01")]
        fpr: Vec<f64>,
        #[arg(long)]
        mc_trials: Option<usize>,
    },
    /// Output law of the encoder against the exact law of a mock sampler.
    Distortion {
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        max_len: usize,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 200_000)]
        runs: u64,
        /// Reuse the configured key for every run instead of drawing fresh ones.
        #[arg(long)]
        fixed_key: bool,
    },
    /// The dummy-LM experiment: flat m=64 and recursive with six keys.
    DummyLm {
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn open_input(path: Option<&PathBuf>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) if p.as_os_str() != "-" => {
            Box::new(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
        }
        _ => Box::new(BufReader::new(io::stdin())),
    })
}

fn open_output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p.as_os_str() != "-" => {
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        _ => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Exit code 1 when some records failed; errors before processing exit with 2.
fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    let out_path = cli.output.clone().or_else(|| cfg.output.clone().map(PathBuf::from));
    let mut out = open_output(out_path.as_ref())?;
    let failed = match cli.command {
        Command::Watermark { input, scheme } => {
            let w = &mut cfg.watermark;
            w.m = scheme.m.unwrap_or(w.m);
            w.k = scheme.k.unwrap_or(w.k);
            w.max_len = scheme.max_len.unwrap_or(w.max_len);
            w.n = scheme.n.unwrap_or(w.n);
            w.dist = scheme.dist.unwrap_or(w.dist);
            let keys = keys::load_keys(cli.key_file.as_deref())?;
            cmd_watermark(&cfg, &keys, open_input(input.as_ref())?, &mut out)?
        }
        Command::Detect { input, method, n, dist, attack_pct, vocab_size } => {
            let d = &mut cfg.detect;
            d.method = method.or(d.method);
            d.n = n.or(d.n);
            d.dist = dist.or(d.dist);
            d.vocab_size = vocab_size.or(d.vocab_size);
            if let Some(pct) = attack_pct {
                d.attack = Some(config::AttackSpec { pct });
            }
            let keys = keys::load_keys(cli.key_file.as_deref())?;
            cmd_detect(&cfg, &keys, open_input(input.as_ref())?, &mut out)?
        }
        Command::Bench { preset, trials, format } => {
            cmd_bench(&cfg, preset, trials, format, &mut out)?;
            0
        }
        Command::Simulate(sim) => {
            match sim {
                Simulate::Alpha { law, v, exponent, m, trials } => {
                    cmd_simulate_alpha(vocab_law(law, v, exponent), &m, trials, cfg.rng_seed, &mut out)?
                }
                Simulate::Gamma { k, m, beta, t, fpr, mc_trials } => {
                    cmd_simulate_gamma(&GammaArgs { k, m, beta, t, fpr, mc_trials }, cfg.rng_seed, &mut out)?
                }
                Simulate::Distortion { m, k, max_len, n, runs, fixed_key } => {
                    let keys = if fixed_key { Some(keys::load_keys(cli.key_file.as_deref())?) } else { None };
                    let a = DistortionArgs { m, k, max_len, n, runs, fixed_key };
                    cmd_simulate_distortion(&cfg, keys.as_deref(), &a, &mut out)?
                }
                Simulate::DummyLm { trials } => cmd_simulate_dummy_lm(trials, cfg.rng_seed, &mut out)?,
            }
            0
        }
        Command::Bound { m, t, alpha, law, v, exponent, trials } => {
            let (alpha, source) = match (alpha, law) {
                (Some(a), _) => (a, json!("given")),
                (None, Some(law)) => {
                    let law = vocab_law(law, v.unwrap_or(32_000), exponent.unwrap_or(1.0));
                    let trials = trials.unwrap_or(2_000);
                    let a = simulate_alpha(&law, m as usize, trials, cfg.rng_seed)?;
                    (a, json!({ "simulated": law, "trials": trials, "rng_seed": cfg.rng_seed }))
                }
                (None, None) => ((m as f64).ln(), json!("ln m")),
            };
            cmd_bound(BoundParams { m, t, alpha }, source, &mut out)?;
            0
        }
    };
    out.flush()?;
    if failed > 0 {
        log::error!("{failed} record(s) failed");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
