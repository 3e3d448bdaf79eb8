//! Multi-bit watermarking for generated code.
//!
//! A message is inserted while decoding by adding a keyed green-list bonus to
//! the model logits, optionally steered back toward grammatical tokens by a
//! next-type predictor. Extraction scores every candidate message and keeps
//! the best one.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common choice.

mod binfmt;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod evalkit;
pub mod extract;
pub mod hashing;
pub mod lexing;
pub mod lmsource;
pub mod message;
pub mod scalar;
pub mod typepred;
pub mod types;

pub use binfmt::FormatError;
pub use decode::{generate, generate_unwatermarked, DecodeError, DecodeStepTrace, Generation, TypeGuidance};
pub use extract::{extract, extract_parallel, ExtractMode, ExtractParams, ExtractionResult};
pub use lexing::{build_type_map, LexTokenType, Lexer, MiniLangLexer, TypeVocabMap};
pub use lmsource::{ExternalProvider, LogitSource, NgramConfig, NgramLm, NgramSource, SourceError};
pub use message::{decode_message, encode_message, CodecError, Decoded};
pub use scalar::Scalar;
pub use typepred::{train_predictor, PredictorTrainingConfig, TypePredictor};
pub use types::{
    GenerationContext, GenerationParams, LogitVector, Preset, TokenId, TypeError, Vocabulary, WatermarkConfig,
    WatermarkKey, WatermarkMessage,
};

pub type Logits = LogitVector<f32>;
pub type Logits64 = LogitVector<f64>;
pub type TypePredictorF32 = TypePredictor<f32>;
pub type TypePredictorF64 = TypePredictor<f64>;
