//! Beam search against exhaustive enumeration of every label path.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rxdecode_core::{decode_topk, DecoderConfig};

use common::{check_decoder as check, random_instance, toy_bigram};

#[test]
fn hundred_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let lm = toy_bigram(&mut rng);
    for case in 0..100 {
        let m = random_instance(&mut rng);
        for alpha in [0.0, 0.5] {
            check(&m, Some(lm.clone()), alpha, 5).unwrap_or_else(|e| panic!("case {case} alpha {alpha}: {e}"));
        }
    }
}

#[test]
fn alpha_zero_matches_no_lm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lm = toy_bigram(&mut rng);
    for _ in 0..50 {
        let m = random_instance(&mut rng);
        let plain = decode_topk(&m, &DecoderConfig::new(5));
        let fused = decode_topk(&m, &DecoderConfig::new(5).with_lm(lm.clone(), 0.0));
        let texts = |v: &[rxdecode_core::DecodedPath]| v.iter().map(|p| p.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&plain), texts(&fused));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_enumeration(seed in any::<u64>(), alpha in prop::sample::select(vec![0.0, 0.3, 1.0]), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lm = toy_bigram(&mut rng);
        let m = random_instance(&mut rng);
        prop_assert_eq!(check(&m, Some(lm), alpha, k), Ok(()));
    }

    #[test]
    fn ranked_and_distinct(seed in any::<u64>(), k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_instance(&mut rng);
        let paths = decode_topk(&m, &DecoderConfig::new(k));
        prop_assert!(!paths.is_empty() && paths.len() <= k);
        for w in paths.windows(2) {
            prop_assert!(w[0].combined_score >= w[1].combined_score);
        }
        let mut texts: Vec<&str> = paths.iter().map(|p| p.text.as_str()).collect();
        texts.sort();
        texts.dedup();
        prop_assert_eq!(texts.len(), paths.len());
    }
}
