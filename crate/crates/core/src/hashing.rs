//! Keyed token selection and the watermark logit it induces.
//!
//! The selection function maps `(token, message, prev, key)` to one bit. It is
//! built from the SplitMix64 finalizer (Steele, Lea & Flood 2014), absorbing
//! the inputs in a fixed order so any implementation can reproduce the bits:
//!
//! ```text
//! absorb(s, x) = mix64((s ^ x) + 0x9e3779b97f4a7c15)          (wrapping)
//! s0 = key.lo ^ 0x6a09e667f3bcc908
//! h  = absorb(absorb(absorb(s0, token), message), prev ^ key.hi)
//! bit = h < floor(green_fraction * 2^64)
//! ```
//!
//! Only the previous token enters the hash, never the position, so the score
//! of an adjacent pair is the same wherever the pair sits in a sequence.

use crate::scalar::Scalar;
use crate::types::{check_green_fraction, LogitVector, TokenId, TypeError, WatermarkKey, WatermarkMessage};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_IV: u64 = 0x6a09_e667_f3bc_c908;
const SENTINEL_TAG: u64 = 0xbb67_ae85_84ca_a73b;

/// SplitMix64 output finalizer.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline(always)]
pub(crate) fn absorb(state: u64, x: u64) -> u64 {
    mix64((state ^ x).wrapping_add(GOLDEN))
}

#[inline(always)]
pub(crate) fn key_seed(key: &WatermarkKey) -> u64 {
    key.lo() ^ SEED_IV
}

/// Hash state after absorbing the token; independent of message and prev.
#[inline(always)]
pub(crate) fn token_stage(seed: u64, token: u64) -> u64 {
    absorb(seed, token)
}

/// Finish the hash from a token stage, a message and `prev ^ key.hi`.
#[inline(always)]
pub(crate) fn finish(token_stage: u64, message: u64, prev_key: u64) -> u64 {
    absorb(absorb(token_stage, message), prev_key)
}

pub(crate) fn sentinel_for(key: &WatermarkKey) -> u64 {
    (1u64 << 32) | (absorb(key_seed(key), key.hi() ^ SENTINEL_TAG) >> 32)
}

/// `floor(delta * 2^64)`, saturating.
pub fn green_threshold(green_fraction: f64) -> u64 {
    (green_fraction * 18_446_744_073_709_551_616.0) as u64
}

/// Full 64-bit hash value of `(token, message, prev, key)`.
pub fn selection_hash(token: u64, message: u32, prev: u64, key: &WatermarkKey) -> u64 {
    finish(token_stage(key_seed(key), token), message as u64, prev ^ key.hi())
}

/// One selection bit. `prev` is a token id or the key's sentinel.
pub fn hash_bit(token: TokenId, message: WatermarkMessage, prev: u64, key: &WatermarkKey, green_fraction: f64) -> u8 {
    (selection_hash(token as u64, message.value(), prev, key) < green_threshold(green_fraction)) as u8
}

/// The selection predicate for one `(key, message, green_fraction)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionPredicate {
    key: WatermarkKey,
    message: WatermarkMessage,
    threshold: u64,
    seed: u64,
}

impl SelectionPredicate {
    pub fn new(key: WatermarkKey, message: WatermarkMessage, green_fraction: f64) -> Result<Self, TypeError> {
        check_green_fraction(green_fraction)?;
        Ok(Self { key, message, threshold: green_threshold(green_fraction), seed: key_seed(&key) })
    }

    pub fn key(&self) -> &WatermarkKey {
        &self.key
    }

    pub fn message(&self) -> WatermarkMessage {
        self.message
    }

    #[inline]
    pub fn is_green(&self, token: TokenId, prev: u64) -> bool {
        finish(token_stage(self.seed, token as u64), self.message.value() as u64, prev ^ self.key.hi()) < self.threshold
    }

    /// Indicator vector over a vocabulary of `vocab_size` tokens.
    pub fn logits<S: Scalar>(&self, prev: u64, vocab_size: usize) -> LogitVector<S> {
        let scores = (0..vocab_size as TokenId)
            .map(|w| if self.is_green(w, prev) { S::one() } else { S::zero() })
            .collect();
        LogitVector::new(scores)
    }
}

/// Watermark logit: entry `w` is 1 iff `w` is selected given `(message, prev)`.
pub fn watermark_logits<S: Scalar>(
    message: WatermarkMessage,
    prev: u64,
    key: &WatermarkKey,
    green_fraction: f64,
    vocab_size: usize,
) -> Result<LogitVector<S>, TypeError> {
    Ok(SelectionPredicate::new(*key, message, green_fraction)?.logits(prev, vocab_size))
}

/// Per-position extraction term: 1 iff `token` is green after `prev`.
pub fn pair_score(token: TokenId, prev: u64, message: WatermarkMessage, key: &WatermarkKey, green_fraction: f64) -> u32 {
    hash_bit(token, message, prev, key, green_fraction) as u32
}
