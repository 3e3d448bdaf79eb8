//! Run configuration file.
//!
//! A TOML document with two optional tables. Every key is optional; missing
//! keys fall back to the library defaults, and command-line flags override
//! whatever the file says.
//!
//! ```toml
//! [watermark]
//! beta = 5.0
//! gamma = 3.0
//! green_fraction = 0.5
//! bits = 20
//! message = 2024          # or: message_text = "GPT"
//! key = "c0de"            # up to 32 hex digits
//!
//! [generation]
//! max_new_tokens = 200
//! temperature = 0.75
//! repetition_penalty = 1.2
//! no_repeat_ngram = 10
//! sampling_mode = "greedy"  # or "multinomial"
//! seed = 0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{encode_message, CodecError};
use crate::types::{GenerationParams, SamplingMode, TypeError, WatermarkConfig, WatermarkKey, WatermarkMessage, DEFAULT_BITS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("set either message or message_text, not both")]
    ConflictingMessage,
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSection {
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub green_fraction: Option<f64>,
    pub bits: Option<u8>,
    pub message: Option<u64>,
    pub message_text: Option<String>,
    pub key: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub max_new_tokens: Option<usize>,
    pub temperature: Option<f64>,
    pub repetition_penalty: Option<f64>,
    pub no_repeat_ngram: Option<usize>,
    pub sampling_mode: Option<SamplingMode>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub watermark: WatermarkSection,
    #[serde(default)]
    pub generation: GenerationSection,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Keys set in `top` win over keys set in `self`.
    ///
    /// A message given in either form in `top` replaces both forms below it.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        let (w, t) = (&mut self.watermark, &top.watermark);
        if t.message.is_some() || t.message_text.is_some() {
            w.message = None;
            w.message_text = None;
        }
        overlay!(w, t, beta, gamma, green_fraction, bits, message, message_text, key);
        let (g, t) = (&mut self.generation, &top.generation);
        overlay!(g, t, max_new_tokens, temperature, repetition_penalty, no_repeat_ngram, sampling_mode, seed);
        self
    }

    pub fn bits(&self) -> u8 {
        self.watermark.bits.unwrap_or(DEFAULT_BITS)
    }

    pub fn key(&self) -> Result<WatermarkKey, ConfigError> {
        Ok(self.watermark.key.as_deref().map(str::parse).transpose()?.unwrap_or_default())
    }

    /// The payload, if one was given.
    pub fn message(&self) -> Result<Option<WatermarkMessage>, ConfigError> {
        let w = &self.watermark;
        match (w.message, &w.message_text) {
            (Some(_), Some(_)) => Err(ConfigError::ConflictingMessage),
            (Some(v), None) => Ok(Some(WatermarkMessage::new(v, self.bits())?)),
            (None, Some(text)) => Ok(Some(encode_message(text, self.bits())?)),
            (None, None) => Ok(None),
        }
    }

    /// Watermark settings for `message`; unset weights take the (5, 3) preset.
    pub fn watermark_config(&self, message: WatermarkMessage) -> Result<WatermarkConfig, ConfigError> {
        let mut cfg = WatermarkConfig::new(message, self.key()?);
        let w = &self.watermark;
        cfg.beta = w.beta.unwrap_or(cfg.beta);
        cfg.gamma = w.gamma.unwrap_or(cfg.gamma);
        cfg.green_fraction = w.green_fraction.unwrap_or(cfg.green_fraction);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn green_fraction(&self) -> f64 {
        self.watermark.green_fraction.unwrap_or(0.5)
    }

    pub fn generation_params(&self) -> Result<GenerationParams, ConfigError> {
        let mut p = GenerationParams::default();
        let g = &self.generation;
        p.max_new_tokens = g.max_new_tokens.unwrap_or(p.max_new_tokens);
        p.temperature = g.temperature.unwrap_or(p.temperature);
        p.repetition_penalty = g.repetition_penalty.unwrap_or(p.repetition_penalty);
        p.no_repeat_ngram = g.no_repeat_ngram.unwrap_or(p.no_repeat_ngram);
        p.sampling_mode = g.sampling_mode.unwrap_or(p.sampling_mode);
        p.seed = g.seed.unwrap_or(p.seed);
        p.validate()?;
        Ok(p)
    }
}
