use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqmark::detector::unique_ngrams;
use seqmark::dist::fisher_combine;
use seqmark::harness::{attack_replace, roc};
use seqmark::{detect, extract_ngrams, hash_ngram, ScoreDistribution, TokenId};

fn family() -> impl Strategy<Value = ScoreDistribution> {
    prop_oneof![
        Just(ScoreDistribution::Uniform01),
        Just(ScoreDistribution::StdNormal),
        (1u32..60, 0.1f64..5.0).prop_map(|(k, beta)| ScoreDistribution::NegGamma { k, beta }),
        Just(ScoreDistribution::ChiSq2),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sum_cdf_is_monotone_and_complementary(dist in family(), t in 1u64..1500, a in -50.0f64..200.0, b in -50.0f64..200.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let fl = dist.sum_cdf(t, lo).unwrap();
        let fh = dist.sum_cdf(t, hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
        prop_assert!(fl <= fh + 1e-12, "F({lo}) = {fl} > F({hi}) = {fh}");
        let sf = dist.sum_sf(t, lo).unwrap();
        prop_assert!((fl + sf - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_cdf_agrees_where_representable(dist in family(), t in 1u64..300, x in -20.0f64..100.0) {
        let f = dist.sum_cdf(t, x).unwrap();
        let lf = dist.sum_ln_cdf(t, x).unwrap();
        if f > 1e-300 {
            prop_assert!((lf - f.ln()).abs() < 1e-7 * f.ln().abs().max(1.0), "{f} vs exp({lf})");
        }
        prop_assert!(lf <= 0.0);
    }

    #[test]
    fn detection_is_calibrated_shape(tokens in prop::collection::vec(0u32..50, 1..80), key in any::<u64>(), n in 1usize..6) {
        let r = detect(&ScoreDistribution::Uniform01, &tokens, key, n).unwrap();
        let p = r.p_value.unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!((r.score + p - 1.0).abs() < 1e-12, "score {} p {} t {}", r.score, p, r.t_unique);
        prop_assert_eq!(r.t_unique, unique_ngrams(&tokens, n).len());
        prop_assert!(r.t_unique >= 1);
    }

    #[test]
    fn detection_ignores_repeated_ngrams(tokens in prop::collection::vec(0u32..20, 4..40), key in any::<u64>()) {
        let doubled: Vec<TokenId> = tokens.iter().chain(tokens.iter()).copied().collect();
        let a = detect(&ScoreDistribution::Uniform01, &tokens, key, 1).unwrap();
        let b = detect(&ScoreDistribution::Uniform01, &doubled, key, 1).unwrap();
        prop_assert_eq!(a.t_unique, b.t_unique);
        prop_assert!((a.score - b.score).abs() < 1e-12);
    }

    #[test]
    fn ngram_extraction_counts(tokens in prop::collection::vec(any::<u32>(), 0..40), n in 1usize..6, prefix in 0usize..10) {
        let prefix = prefix.min(tokens.len());
        let grams = extract_ngrams(&tokens, n, prefix);
        prop_assert_eq!(grams.len(), tokens.len().saturating_sub(prefix));
        for g in grams {
            prop_assert!(!g.is_empty() && g.len() <= n);
        }
    }

    #[test]
    fn hash_depends_on_key_and_window(key in any::<u64>(), w in prop::collection::vec(any::<u32>(), 1..6)) {
        prop_assert_eq!(hash_ngram(key, &w), hash_ngram(key, &w));
        prop_assert_ne!(hash_ngram(key, &w), hash_ngram(key.wrapping_add(1), &w));
        let mut longer = w.clone();
        longer.push(0);
        prop_assert_ne!(hash_ngram(key, &w), hash_ngram(key, &longer));
    }

    #[test]
    fn fisher_score_is_a_probability_and_monotone(ps in prop::collection::vec(1e-200f64..=1.0, 1..20), i in any::<prop::sample::Index>()) {
        let s = fisher_combine(&ps).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        let mut smaller = ps.clone();
        let j = i.index(ps.len());
        smaller[j] *= 0.5;
        prop_assert!(fisher_combine(&smaller).unwrap() >= s);
    }

    #[test]
    fn auc_equals_pair_count(neg in prop::collection::vec(0u8..10, 1..30), pos in prop::collection::vec(0u8..10, 1..30)) {
        let nf: Vec<f64> = neg.iter().map(|&x| x as f64).collect();
        let pf: Vec<f64> = pos.iter().map(|&x| x as f64).collect();
        let r = roc(&nf, &pf).unwrap();
        let mut c = 0.0;
        for p in &pf {
            for n in &nf {
                c += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        prop_assert!((r.auc - c / (nf.len() * pf.len()) as f64).abs() < 1e-12);
        let flipped = roc(&pf, &nf).unwrap();
        prop_assert!((r.auc + flipped.auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attack_changes_exactly_the_requested_count(tokens in prop::collection::vec(0u32..30, 0..100), pct in 0.0f64..=100.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = attack_replace(&tokens, pct, 30, &mut rng).unwrap();
        prop_assert_eq!(out.len(), tokens.len());
        let changed = tokens.iter().zip(&out).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, (pct * tokens.len() as f64 / 100.0).floor() as usize);
        prop_assert!(out.iter().all(|&t| t < 30));
    }
}
