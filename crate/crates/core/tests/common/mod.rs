//! Oracles shared by the integration tests and the acceptance runner. None of
//! them call into the crate's special functions.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use seqmark::ScoreDistribution;

/// `ln n!` by direct summation.
pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Composite Simpson rule with `panels` (even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    assert!(panels % 2 == 0);
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `P(a, x)` for integer `a ≥ 1` by quadrature of the gamma density.
pub fn reg_gamma_p_quadrature(a: u64, x: f64) -> f64 {
    let ln_norm = ln_factorial(a - 1);
    let am1 = (a - 1) as f64;
    let f = |t: f64| if t <= 0.0 { if a == 1 { 1.0 } else { 0.0 } } else { (am1 * t.ln() - t - ln_norm).exp() };
    simpson(f, 0.0, x, 400_000)
}

/// `Φ(x)` by quadrature of the normal density from 0.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 + simpson(phi, 0.0, x, 200_000)
}

/// Monte Carlo estimate of `P(U₁ + … + U_t ≤ x)` and its standard error.
pub fn irwin_hall_mc(t: usize, x: f64, samples: usize, seed: u64) -> (f64, f64) {
    let chunks = 64;
    let per = samples / chunks;
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            (0..per).filter(|_| (0..t).map(|_| rng.random::<f64>()).sum::<f64>() <= x).count()
        })
        .sum();
    let n = (per * chunks) as f64;
    let p = hits as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// One draw from `dist` using `rand_distr` samplers rather than our inverse CDFs.
pub fn independent_draw(dist: &ScoreDistribution, rng: &mut ChaCha8Rng) -> f64 {
    match *dist {
        ScoreDistribution::Uniform01 => rng.random(),
        ScoreDistribution::StdNormal => rng.sample(StandardNormal),
        ScoreDistribution::NegGamma { k, beta } => -Gamma::new(1.0 / k as f64, 1.0 / beta).unwrap().sample(rng),
        ScoreDistribution::ChiSq2 => ChiSquared::new(2.0).unwrap().sample(rng),
    }
}

/// Upper bound on the largest gap between `sum_cdf(t, ·)` and the empirical
/// CDF of `samples` independent t-fold sums, with the DKW radius at
/// `1 - alpha` confidence.
///
/// `F` is evaluated only at every `stride`-th order statistic; between two
/// evaluated points monotonicity of both CDFs brackets the gap.
pub fn dkw_gap(dist: &ScoreDistribution, t: u64, samples: usize, alpha: f64, seed: u64) -> (f64, f64) {
    let mut sums: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..t).map(|_| independent_draw(dist, &mut rng)).sum()
        })
        .collect();
    sums.par_sort_by(f64::total_cmp);
    let n = samples as f64;
    let stride = (samples / 20_000).max(1);
    let mut idx: Vec<usize> = (0..samples).step_by(stride).collect();
    if *idx.last().unwrap() != samples - 1 {
        idx.push(samples - 1);
    }
    let f: Vec<f64> = idx.par_iter().map(|&i| dist.sum_cdf(t, sums[i]).unwrap()).collect();
    // Below the first order statistic F_n = 0; from the last one on, F_n = 1.
    let mut gap = f[0].max(1.0 - f[f.len() - 1]);
    for w in 0..idx.len() {
        let (a, fa) = (idx[w], f[w]);
        gap = gap.max((fa - a as f64 / n).abs()).max((fa - (a + 1) as f64 / n).abs());
        if w + 1 < idx.len() {
            let (b, fb) = (idx[w + 1], f[w + 1]);
            gap = gap.max(b as f64 / n - fa).max(fb - (a + 1) as f64 / n);
        }
    }
    (gap, ((2.0 / alpha).ln() / (2.0 * n)).sqrt())
}

/// The four families with a non-trivial gamma shape for NegGamma.
pub fn families() -> [ScoreDistribution; 4] {
    [
        ScoreDistribution::Uniform01,
        ScoreDistribution::StdNormal,
        ScoreDistribution::NegGamma { k: 4, beta: 1.5 },
        ScoreDistribution::ChiSq2,
    ]
}
