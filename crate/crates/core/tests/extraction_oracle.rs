//! `extract_parallel` against a naive scorer built only on `hash_bit`.

use gramark::extract::{is_extracted_as, scored_pairs};
use gramark::hashing::hash_bit;
use gramark::{extract, extract_parallel, ExtractMode, ExtractParams, TokenId, WatermarkKey, WatermarkMessage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (best message, best score, runner-up score), lowest id on ties.
fn naive(ids: &[TokenId], p: &ExtractParams) -> (u32, u32, u32) {
    let mut scores = Vec::new();
    for m in 0..1u64 << p.bits {
        let msg = WatermarkMessage::new(m, p.bits).unwrap();
        let mut s = 0;
        for i in 0..ids.len() {
            let prev = match (i, p.mode) {
                (0, ExtractMode::Cropped) => continue,
                (0, ExtractMode::FromStart) => p.key.sentinel_prev(),
                _ => ids[i - 1] as u64,
            };
            s += hash_bit(ids[i], msg, prev, &p.key, p.green_fraction) as u32;
        }
        scores.push(s);
    }
    let best = *scores.iter().max().unwrap();
    let best_msg = scores.iter().position(|&s| s == best).unwrap();
    let runner_up = scores.iter().enumerate().filter(|&(i, _)| i != best_msg).map(|(_, &s)| s).max().unwrap_or(0);
    (best_msg as u32, best, runner_up)
}

/// A sequence where each token is green under `m` with probability `bias`
/// (or uniform when `m` is None).
fn sequence(rng: &mut ChaCha8Rng, p: &ExtractParams, m: Option<WatermarkMessage>, len: usize, vocab: u32) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = Vec::with_capacity(len);
    for _ in 0..len {
        let prev = ids.last().map_or(p.key.sentinel_prev(), |&t| t as u64);
        let mut tok = rng.gen_range(0..vocab);
        if let Some(m) = m {
            if rng.gen_bool(0.85) {
                while hash_bit(tok, m, prev, &p.key, p.green_fraction) == 0 {
                    tok = rng.gen_range(0..vocab);
                }
            }
        }
        ids.push(tok);
    }
    ids
}

#[test]
fn hundred_sequences_match_naive_scorer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let bits = rng.gen_range(1..=10u8);
        let mode = if rng.gen_bool(0.5) { ExtractMode::FromStart } else { ExtractMode::Cropped };
        let green_fraction = [0.5, 0.3, 0.7][case % 3];
        let p = ExtractParams { key: WatermarkKey(rng.gen()), bits, green_fraction, mode };
        let embedded = WatermarkMessage::new(rng.gen_range(0..1u64 << bits), bits).unwrap();
        let watermarked = case % 2 == 0;
        let len = rng.gen_range(0..120);
        let ids = sequence(&mut rng, &p, watermarked.then_some(embedded), len, 700);

        let (best, score, runner_up) = naive(&ids, &p);
        for workers in [1, 2, 8] {
            let r = extract_parallel(&ids, &p, workers).unwrap();
            assert_eq!(r.best_message.value(), best, "case {case} workers {workers}");
            assert_eq!(r.best_score, score, "case {case} workers {workers}");
            assert_eq!(r.runner_up_score, runner_up, "case {case} workers {workers}");
            assert_eq!(r.margin, score - runner_up, "case {case} workers {workers}");
            assert_eq!(r.pairs, scored_pairs(len, mode));
        }
        for target in [best, embedded.value()] {
            let t = WatermarkMessage::new(target as u64, bits).unwrap();
            assert_eq!(is_extracted_as(&ids, t, &p).unwrap(), target == best, "case {case}");
        }
    }
}

#[test]
fn wide_messages_split_on_block_boundaries() {
    // 2^14 spans several blocks per worker; the result may not depend on the split
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = ExtractParams::new(WatermarkKey(0xabc), 14);
    let m = WatermarkMessage::new(9_999, 14).unwrap();
    let ids = sequence(&mut rng, &p, Some(m), 60, 300);
    let one = extract(&ids, &p).unwrap();
    assert_eq!(one.best_message, m);
    for workers in [2, 3, 5, 8, 64] {
        assert_eq!(extract_parallel(&ids, &p, workers).unwrap(), one);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parallel_equals_naive(seed in any::<u64>(), bits in 1u8..=8, len in 0usize..40, cropped in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if cropped { ExtractMode::Cropped } else { ExtractMode::FromStart };
        let p = ExtractParams { key: WatermarkKey(rng.gen()), bits, green_fraction: 0.5, mode };
        let ids: Vec<TokenId> = (0..len).map(|_| rng.gen_range(0..50)).collect();
        let (best, score, runner_up) = naive(&ids, &p);
        let r = extract_parallel(&ids, &p, 4).unwrap();
        prop_assert_eq!((r.best_message.value(), r.best_score, r.runner_up_score), (best, score, runner_up));
        prop_assert_eq!(r.ambiguous, score == runner_up);
    }
}
