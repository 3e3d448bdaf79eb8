//! Autoregressive logit sources.
//!
//! [`NgramLm`] is a deterministic count model over code lexemes that runs
//! anywhere; [`ExternalProvider`] talks to a real model through the
//! line-delimited JSON protocol in [`protocol`].

mod ngram;
pub mod protocol;

use thiserror::Error;

pub use ngram::{NgramConfig, NgramLm, NgramSource, TokenizerKind};
pub use protocol::{decode_logits_b64, encode_logits_b64, parse_logits_reply, serve, ExternalProvider, LogitEncoding};

use crate::binfmt::FormatError;
use crate::scalar::Scalar;
use crate::types::{GenerationContext, LogitVector, Vocabulary};

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("corpus too small: {tokens} tokens, need at least {needed}")]
    CorpusTooSmall { tokens: usize, needed: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("peer closed the stream")]
    PeerExit,
    #[error("logit vector has {found} entries, vocabulary has {expected}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("model file: {0}")]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that produces next-token scores for a context.
///
/// Implementations must be deterministic: equal contexts give equal vectors.
pub trait LogitSource<S: Scalar> {
    fn vocabulary(&self) -> &Vocabulary;

    fn next_logits(&mut self, ctx: &GenerationContext) -> Result<LogitVector<S>, SourceError>;
}

impl<S: Scalar, T: LogitSource<S> + ?Sized> LogitSource<S> for Box<T> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn next_logits(&mut self, ctx: &GenerationContext) -> Result<LogitVector<S>, SourceError> {
        (**self).next_logits(ctx)
    }
}
