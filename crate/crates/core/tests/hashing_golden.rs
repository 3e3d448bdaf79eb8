//! The selection hash against vectors from an independent implementation
//! (tools/gen_prf_vectors.py), plus green-fraction calibration.

use gramark::hashing::{hash_bit, selection_hash, SelectionPredicate};
use gramark::{WatermarkKey, WatermarkMessage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Vector {
    token: u64,
    message: u32,
    prev: u64,
    key: WatermarkKey,
    expect: String,
}

fn load(text: &str) -> Vec<Vector> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("sentinel") && !l.trim().is_empty())
        .map(|l| {
            let (lhs, rhs) = l.split_once("->").unwrap();
            let f: Vec<&str> = lhs.split_whitespace().collect();
            Vector {
                token: f[0].parse().unwrap(),
                message: f[1].parse().unwrap(),
                prev: f[2].parse().unwrap(),
                key: f[3].parse().unwrap(),
                expect: rhs.trim().to_string(),
            }
        })
        .collect()
}

#[test]
fn full_hash_matches_reference() {
    let vectors = load(include_str!("../golden/selection_hash.txt"));
    assert!(vectors.len() >= 32);
    for v in &vectors {
        let h = selection_hash(v.token, v.message, v.prev, &v.key);
        assert_eq!(format!("{h:016x}"), v.expect, "token {} message {} prev {}", v.token, v.message, v.prev);
    }
}

#[test]
fn sentinels_match_reference() {
    let text = include_str!("../golden/selection_hash.txt");
    let mut seen = 0;
    for l in text.lines().filter(|l| l.starts_with("sentinel")) {
        let (lhs, rhs) = l.split_once("->").unwrap();
        let key: WatermarkKey = lhs.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert_eq!(key.sentinel_prev(), rhs.trim().parse::<u64>().unwrap());
        seen += 1;
    }
    assert_eq!(seen, 3);
}

#[test]
fn thirty_two_bit_vectors_match() {
    let vectors = load(include_str!("../golden/prf_vectors.txt"));
    assert_eq!(vectors.len(), 32);
    for v in &vectors {
        // message values in the file fit 20 bits
        let m = WatermarkMessage::new(v.message as u64, 20).unwrap();
        let bit = hash_bit(v.token as u32, m, v.prev, &v.key, 0.5);
        assert_eq!(bit.to_string(), v.expect, "token {} message {} prev {}", v.token, v.message, v.prev);
    }
}

#[test]
fn green_fraction_within_three_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1024usize;
    for delta in [0.5, 0.25] {
        let sigma = (delta * (1.0 - delta) / n as f64).sqrt();
        for _ in 0..20 {
            let key = WatermarkKey(rng.gen());
            let m = WatermarkMessage::new(rng.gen_range(0..1 << 20), 20).unwrap();
            let prev = rng.gen_range(0..n as u64);
            let p = SelectionPredicate::new(key, m, delta).unwrap();
            let green = (0..n as u32).filter(|&w| p.is_green(w, prev)).count();
            let frac = green as f64 / n as f64;
            assert!((frac - delta).abs() <= 3.0 * sigma, "delta {delta}: fraction {frac}");
        }
    }
}

proptest! {
    #[test]
    fn predicate_agrees_with_scalar_bit(token in 0u32..50_000, m in 0u64..1 << 20, prev in any::<u64>(), key in any::<u128>()) {
        let key = WatermarkKey(key);
        let m = WatermarkMessage::new(m, 20).unwrap();
        let p = SelectionPredicate::new(key, m, 0.5).unwrap();
        prop_assert_eq!(p.is_green(token, prev) as u8, hash_bit(token, m, prev, &key, 0.5));
        let l = p.logits::<f32>(prev, (token + 1) as usize);
        prop_assert_eq!(l.scores[token as usize], p.is_green(token, prev) as u8 as f32);
    }

    #[test]
    fn sentinel_never_collides(key in any::<u128>()) {
        prop_assert!(WatermarkKey(key).sentinel_prev() >= 1u64 << 32);
    }
}
