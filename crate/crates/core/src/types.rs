//! Domain types shared by every stage of the pipeline.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing;
use crate::scalar::Scalar;

/// Dense token id into a [`Vocabulary`].
pub type TokenId = u32;

/// Default payload width in bits.
pub const DEFAULT_BITS: u8 = 20;
/// Widest payload the extractor accepts.
pub const MAX_BITS: u8 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("vocabulary needs at least 2 tokens, got {0}")]
    VocabularyTooSmall(usize),
    #[error("duplicate vocabulary token {0:?}")]
    DuplicateToken(String),
    #[error("message width must be in 1..={MAX_BITS} bits, got {0}")]
    BadWidth(u8),
    #[error("message {value} does not fit in {bits} bits")]
    OverflowsWidth { value: u64, bits: u8 },
    #[error("invalid key {0:?}: expected up to 32 hex digits")]
    BadKey(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("no vocabulary token matches the text at byte {0}")]
    Untokenizable(usize),
}

/// Token inventory of a logit source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    special: Vec<bool>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self, TypeError> {
        let n = tokens.len();
        Self::with_special(tokens, vec![false; n])
    }

    /// `special[i]` marks control tokens (unknown, end-of-sequence, ...) that
    /// never belong to a lexical class.
    pub fn with_special(tokens: Vec<String>, special: Vec<bool>) -> Result<Self, TypeError> {
        if tokens.len() < 2 {
            return Err(TypeError::VocabularyTooSmall(tokens.len()));
        }
        assert_eq!(tokens.len(), special.len(), "one special flag per token");
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(TypeError::DuplicateToken(t.clone()));
            }
        }
        Ok(Self { tokens, special, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.get(id as usize).copied().unwrap_or(false)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn check(&self, id: TokenId) -> Result<(), TypeError> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(TypeError::TokenOutOfRange { id, size: self.tokens.len() })
        }
    }

    /// Greedy longest-match split of `text` into non-special tokens.
    ///
    /// For vocabularies that come without a tokenizer (an external provider
    /// only reports its token strings).
    pub fn tokenize_longest(&self, text: &str) -> Result<Vec<TokenId>, TypeError> {
        let longest = self.tokens.iter().map(String::len).max().unwrap_or(0);
        let mut ids = Vec::new();
        let mut at = 0;
        while at < text.len() {
            let rest = &text[at..];
            let found = rest
                .char_indices()
                .map(|(i, c)| i + c.len_utf8())
                .take_while(|&end| end <= longest)
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .find_map(|end| self.id(&rest[..end]).filter(|&id| !self.is_special(id)).map(|id| (id, end)));
            let (id, len) = found.ok_or(TypeError::Untokenizable(at))?;
            ids.push(id);
            at += len;
        }
        Ok(ids)
    }

    /// Concatenate token strings. Special tokens render as nothing.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if !self.is_special(id) {
                if let Some(t) = self.token(id) {
                    out.push_str(t);
                }
            }
        }
        out
    }
}

/// The integer payload `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WatermarkMessage {
    value: u32,
    bits: u8,
}

impl WatermarkMessage {
    pub fn new(value: u64, bits: u8) -> Result<Self, TypeError> {
        check_bits(bits)?;
        if value >= 1u64 << bits {
            return Err(TypeError::OverflowsWidth { value, bits });
        }
        Ok(Self { value: value as u32, bits })
    }

    pub fn value(&self) -> u32 {
        self.value
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    /// Size of the message space, `2^bits`.
    pub fn space(bits: u8) -> u64 {
        1u64 << bits
    }
}

impl fmt::Display for WatermarkMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

pub(crate) fn check_bits(bits: u8) -> Result<(), TypeError> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(TypeError::BadWidth(bits))
    }
}

/// 128-bit secret seeding the selection hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct WatermarkKey(pub u128);

impl WatermarkKey {
    pub fn lo(&self) -> u64 {
        self.0 as u64
    }

    pub fn hi(&self) -> u64 {
        (self.0 >> 64) as u64
    }

    /// Stand-in for the previous token at generation position 0.
    ///
    /// Always `>= 2^32`, so it can never collide with a real [`TokenId`].
    pub fn sentinel_prev(&self) -> u64 {
        hashing::sentinel_for(self)
    }

    pub fn to_hex(&self) -> String {
        format!("{:032x}", self.0)
    }
}

impl FromStr for WatermarkKey {
    type Err = TypeError;

    /// Accepts up to 32 hex digits, with or without a `0x` prefix.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
        if t.is_empty() || t.len() > 32 {
            return Err(TypeError::BadKey(s.to_string()));
        }
        u128::from_str_radix(t, 16)
            .map(WatermarkKey)
            .map_err(|_| TypeError::BadKey(s.to_string()))
    }
}

impl fmt::Display for WatermarkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Logit weights and the hash parameters of one watermarking session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WatermarkConfig {
    /// Weight of the watermark logit.
    pub beta: f64,
    /// Weight of the type-predictor logit.
    pub gamma: f64,
    /// Expected fraction of the vocabulary selected by the hash.
    pub green_fraction: f64,
    pub message: WatermarkMessage,
    pub key: WatermarkKey,
}

/// Published `(beta, gamma)` settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// (5, 3)
    Standard,
    /// (6, 4)
    Strong,
}

impl Preset {
    pub fn beta_gamma(self) -> (f64, f64) {
        match self {
            Preset::Standard => (5.0, 3.0),
            Preset::Strong => (6.0, 4.0),
        }
    }
}

impl WatermarkConfig {
    pub fn new(message: WatermarkMessage, key: WatermarkKey) -> Self {
        let (beta, gamma) = Preset::Standard.beta_gamma();
        Self { beta, gamma, green_fraction: 0.5, message, key }
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        (self.beta, self.gamma) = preset.beta_gamma();
        self
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(TypeError::InvalidParameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(TypeError::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        check_green_fraction(self.green_fraction)
    }
}

pub(crate) fn check_green_fraction(delta: f64) -> Result<(), TypeError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(TypeError::InvalidParameter(format!("green fraction must be in (0, 1), got {delta}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Greedy,
    Multinomial,
}

impl FromStr for SamplingMode {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(SamplingMode::Greedy),
            "multinomial" => Ok(SamplingMode::Multinomial),
            other => Err(TypeError::InvalidParameter(format!("unknown sampling mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    /// Only consulted in multinomial mode; argmax ignores it.
    pub temperature: f64,
    pub repetition_penalty: f64,
    /// 0 disables the n-gram block.
    pub no_repeat_ngram: usize,
    pub sampling_mode: SamplingMode,
    /// Generation stops after emitting this id, if set.
    pub eos_token: Option<TokenId>,
    /// Seed for multinomial sampling.
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 200,
            temperature: 0.75,
            repetition_penalty: 1.2,
            no_repeat_ngram: 10,
            sampling_mode: SamplingMode::Greedy,
            eos_token: None,
            seed: 0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), TypeError> {
        if self.max_new_tokens == 0 {
            return Err(TypeError::InvalidParameter("max_new_tokens must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(TypeError::InvalidParameter("temperature must be positive".into()));
        }
        if !(self.repetition_penalty >= 1.0) {
            return Err(TypeError::InvalidParameter("repetition_penalty must be >= 1".into()));
        }
        Ok(())
    }
}

/// Prompt `rho` plus the tokens generated so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationContext {
    pub prompt_ids: Vec<TokenId>,
    pub generated_ids: Vec<TokenId>,
}

impl GenerationContext {
    pub fn new(prompt_ids: Vec<TokenId>) -> Result<Self, TypeError> {
        if prompt_ids.is_empty() {
            return Err(TypeError::EmptyPrompt);
        }
        Ok(Self { prompt_ids, generated_ids: Vec::new() })
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), TypeError> {
        if self.prompt_ids.is_empty() {
            return Err(TypeError::EmptyPrompt);
        }
        self.all_ids().try_for_each(|id| vocab.check(id))
    }

    pub fn all_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.prompt_ids.iter().chain(self.generated_ids.iter()).copied()
    }

    pub fn len(&self) -> usize {
        self.prompt_ids.len() + self.generated_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Previous-token input of the selection hash for the next position.
    pub fn hash_prev(&self, key: &WatermarkKey) -> u64 {
        match self.generated_ids.last() {
            Some(&id) => id as u64,
            None => key.sentinel_prev(),
        }
    }
}

/// Unnormalized per-token scores, indexed by [`TokenId`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector<S> {
    pub scores: Vec<S>,
}

impl<S: Scalar> LogitVector<S> {
    pub fn new(scores: Vec<S>) -> Self {
        Self { scores }
    }

    pub fn zeros(len: usize) -> Self {
        Self { scores: vec![S::zero(); len] }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, other: &LogitVector<S>, weight: S) {
        assert_eq!(self.len(), other.len(), "logit vectors must share a vocabulary");
        for (a, &b) in self.scores.iter_mut().zip(&other.scores) {
            *a += weight * b;
        }
    }

    pub fn argmax(&self) -> Option<TokenId> {
        crate::scalar::argmax(&self.scores).map(|i| i as TokenId)
    }

    pub fn all_finite(&self) -> bool {
        self.scores.iter().all(|s| s.is_finite())
    }

    /// Number of entries equal to one; meaningful for indicator vectors.
    pub fn popcount(&self) -> usize {
        self.scores.iter().filter(|&&s| s == S::one()).count()
    }
}
