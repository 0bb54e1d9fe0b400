//! Black-box sequence watermarking.
//!
//! The encoder only needs something that samples token sequences
//! ([`SequenceSampler`]); it draws several candidates per chunk and keeps the
//! one favored by a keyed pseudorandom function over n-grams, in a way that
//! leaves the output distribution unchanged. Detectors recompute the same
//! pseudorandom values from the text alone and turn them into calibrated
//! p-values.
//!
//! ```
//! use seqmark::{detect, watermark, MockModel, MockSampler, ScoreDistribution, WatermarkConfig};
//!
//! let sampler = MockSampler::new(MockModel::uniform(100).unwrap(), 7);
//! let cfg = WatermarkConfig::flat(ScoreDistribution::Uniform01, 42, 16, 4, 10, 60);
//! let tokens = watermark(&cfg, &[], &sampler).unwrap();
//! let report = detect(&cfg.dist, &tokens, 42, 4).unwrap();
//! assert!(report.p_value.unwrap() < 0.01);
//! ```

pub mod baselines;
pub mod detector;
pub mod dist;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod prf;
pub mod sampler;
pub mod stats;

pub use detector::{
    detect, detect_fisher, detect_lrt_gamma, detect_lrt_kde, detect_recursive, estimate_f0, estimate_f1,
    DetectionReport, GammaLrtParams, KeyPValue, Method,
};
pub use dist::{DensityEstimate, ScoreDistribution};
pub use encoder::{
    generate_plain, score_seqs, select_winner, watermark, watermark_recursive, watermark_single, watermark_with_stop,
    CandidatePool, Context, WatermarkConfig,
};
pub use error::{Error, Result, SamplerError};
pub use prf::{extract_ngrams, hash_ngram, prf_draw, SecretKey, Seed, TokenId};
pub use sampler::{MockModel, MockSampler, NextTokenModel, SamplerSpec, SequenceSampler};
