//! The watermarked decoding loop.
//!
//! Each step combines three score vectors over the vocabulary,
//! `lm + beta * wm + gamma * tp`, after a repetition penalty on the LM term,
//! then masks tokens that would repeat an n-gram and takes the argmax.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::hashing::SelectionPredicate;
use crate::lexing::{LexTokenType, Lexer, TypeVocabMap};
use crate::lmsource::{LogitSource, SourceError};
use crate::scalar::{lit, softmax, Scalar};
use crate::typepred::{tp_logits, TpOptions, TypePredictor};
use crate::types::{GenerationContext, GenerationParams, LogitVector, SamplingMode, TokenId, TypeError, WatermarkConfig};

/// Type-guidance components for [`generate`].
#[derive(Clone, Copy)]
pub struct TypeGuidance<'a, S> {
    pub predictor: &'a TypePredictor<S>,
    pub map: &'a TypeVocabMap,
    pub lexer: &'a dyn Lexer,
    pub options: TpOptions,
}

impl<'a, S> TypeGuidance<'a, S> {
    pub fn new(predictor: &'a TypePredictor<S>, map: &'a TypeVocabMap, lexer: &'a dyn Lexer) -> Self {
        Self { predictor, map, lexer, options: TpOptions::default() }
    }
}

/// What happened at one decoding step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodeStepTrace {
    pub step: usize,
    /// Previous-token input of the selection hash (a token id, or the key's
    /// sentinel at step 0).
    pub prev: u64,
    pub chosen: TokenId,
    /// Argmax of the penalized, masked LM scores alone.
    pub lm_argmax: Option<TokenId>,
    pub predicted_type: Option<LexTokenType>,
    pub wm_applied: bool,
    pub tp_applied: bool,
    /// Some token was masked by the n-gram block at this step.
    pub ngram_blocked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Generation {
    pub ids: Vec<TokenId>,
    pub traces: Vec<DecodeStepTrace>,
    pub stopped_on_eos: bool,
}

impl Generation {
    /// Steps where the emitted token differs from the plain LM argmax.
    pub fn divergence(&self) -> f64 {
        if self.traces.is_empty() {
            return 0.0;
        }
        let diff = self.traces.iter().filter(|t| t.lm_argmax != Some(t.chosen)).count();
        diff as f64 / self.traces.len() as f64
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Invalid(#[from] TypeError),
    #[error("component vocabulary mismatch: source has {expected} tokens, {what} has {found}")]
    VocabMismatch { what: &'static str, expected: usize, found: usize },
    /// The source failed mid-generation; `partial` holds what was emitted.
    #[error("logit source failed after {} tokens: {source}", partial.ids.len())]
    Source { source: SourceError, partial: Generation },
    #[error("no selectable token at step {0}")]
    NoCandidate(usize),
}

/// Tokens banned because emitting them would repeat an `n`-gram of `ids`.
pub fn banned_by_ngram(ids: &[TokenId], n: usize) -> HashSet<TokenId> {
    let mut banned = HashSet::new();
    if n == 0 || ids.len() < n {
        return banned;
    }
    if n == 1 {
        banned.extend(ids.iter().copied());
        return banned;
    }
    let prefix = &ids[ids.len() - (n - 1)..];
    for j in 0..=ids.len() - n {
        if &ids[j..j + n - 1] == prefix {
            banned.insert(ids[j + n - 1]);
        }
    }
    banned
}

/// Divide positive scores and multiply negative scores of every token in
/// `generated` by `penalty`.
pub fn apply_repetition_penalty<S: Scalar>(lm: &mut LogitVector<S>, generated: &[TokenId], penalty: f64) {
    if penalty == 1.0 {
        return;
    }
    let p: S = lit(penalty);
    let seen: HashSet<TokenId> = generated.iter().copied().collect();
    for id in seen {
        if let Some(s) = lm.scores.get_mut(id as usize) {
            *s = if *s > S::zero() { *s / p } else { *s * p };
        }
    }
}

/// `lm + beta * wm + gamma * tp`, then `-inf` on every banned token.
pub fn combine_scores<S: Scalar>(
    lm: &LogitVector<S>,
    wm: Option<(&LogitVector<S>, f64)>,
    tp: Option<(&LogitVector<S>, f64)>,
    banned: &HashSet<TokenId>,
) -> LogitVector<S> {
    let mut combined = lm.clone();
    for (term, weight) in [wm, tp].into_iter().flatten() {
        combined.add_scaled(term, lit(weight));
    }
    for &id in banned {
        combined.scores[id as usize] = S::neg_infinity();
    }
    combined
}

/// Decode `params.max_new_tokens` tokens after `prompt_ids`.
///
/// `wm = None` and `tp = None` give plain greedy decoding of the source.
pub fn generate<S: Scalar>(
    source: &mut dyn LogitSource<S>,
    prompt_ids: &[TokenId],
    wm: Option<&WatermarkConfig>,
    tp: Option<&TypeGuidance<'_, S>>,
    params: &GenerationParams,
) -> Result<Generation, DecodeError> {
    params.validate()?;
    let vocab = source.vocabulary().clone();
    let mut ctx = GenerationContext::new(prompt_ids.to_vec())?;
    ctx.validate(&vocab)?;
    let predicate = match wm {
        Some(cfg) => {
            cfg.validate()?;
            Some(SelectionPredicate::new(cfg.key, cfg.message, cfg.green_fraction)?)
        }
        None => None,
    };
    if let Some(g) = tp {
        if g.map.vocab_size() != vocab.len() {
            return Err(DecodeError::VocabMismatch { what: "type map", expected: vocab.len(), found: g.map.vocab_size() });
        }
    }
    let beta = wm.map_or(0.0, |c| c.beta);
    let gamma = wm.map_or(0.0, |c| c.gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Generation::default();

    for step in 0..params.max_new_tokens {
        let mut lm = match source.next_logits(&ctx) {
            Ok(l) => l,
            Err(source) => return Err(DecodeError::Source { source, partial: out }),
        };
        if lm.len() != vocab.len() {
            let err = SourceError::VocabMismatch { expected: vocab.len(), found: lm.len() };
            return Err(DecodeError::Source { source: err, partial: out });
        }
        apply_repetition_penalty(&mut lm, &ctx.generated_ids, params.repetition_penalty);

        let prev = match (&predicate, ctx.generated_ids.last()) {
            (_, Some(&id)) => id as u64,
            (Some(p), None) => p.key().sentinel_prev(),
            (None, None) => 0,
        };
        let wm_term = predicate.as_ref().map(|p| p.logits::<S>(prev, vocab.len()));
        let mut predicted_type = None;
        let tp_applied = tp.is_some() && gamma != 0.0;
        let mut tp_term = None;
        if let (Some(g), true) = (tp, tp_applied) {
            let tp_step = tp_logits(g.predictor, &ctx, g.lexer, g.map, &vocab, g.options);
            predicted_type = Some(tp_step.predicted);
            tp_term = Some(tp_step.logits);
        }
        let all: Vec<TokenId> = ctx.all_ids().collect();
        let banned = banned_by_ngram(&all, params.no_repeat_ngram);
        let combined = combine_scores(&lm, wm_term.as_ref().map(|w| (w, beta)), tp_term.as_ref().map(|t| (t, gamma)), &banned);
        for &id in &banned {
            lm.scores[id as usize] = S::neg_infinity();
        }
        let chosen = match params.sampling_mode {
            SamplingMode::Greedy => combined.argmax().filter(|&id| combined.scores[id as usize] > S::neg_infinity()),
            SamplingMode::Multinomial => {
                let t: S = lit(params.temperature);
                let scaled: Vec<S> = combined.scores.iter().map(|&s| s / t).collect();
                let probs: Vec<f64> = softmax(&scaled).iter().map(|p| p.to_f64().unwrap_or(0.0)).collect();
                WeightedIndex::new(&probs).ok().map(|d| d.sample(&mut rng) as TokenId)
            }
        };
        let chosen = chosen.ok_or(DecodeError::NoCandidate(step))?;
        out.traces.push(DecodeStepTrace {
            step,
            prev,
            chosen,
            lm_argmax: lm.argmax(),
            predicted_type,
            wm_applied: predicate.is_some(),
            tp_applied,
            ngram_blocked: !banned.is_empty(),
        });
        out.ids.push(chosen);
        ctx.generated_ids.push(chosen);
        if params.eos_token == Some(chosen) {
            out.stopped_on_eos = true;
            break;
        }
    }
    Ok(out)
}

/// Plain decoding of the source, no watermark and no type guidance.
pub fn generate_unwatermarked<S: Scalar>(
    source: &mut dyn LogitSource<S>,
    prompt_ids: &[TokenId],
    params: &GenerationParams,
) -> Result<Generation, DecodeError> {
    generate(source, prompt_ids, None, None, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmsource::SourceError;
    use crate::types::{Vocabulary, WatermarkKey, WatermarkMessage};

    /// Returns the same vector every step.
    struct Fixed {
        vocab: Vocabulary,
        logits: Vec<f64>,
    }

    impl LogitSource<f64> for Fixed {
        fn vocabulary(&self) -> &Vocabulary {
            &self.vocab
        }

        fn next_logits(&mut self, _: &GenerationContext) -> Result<LogitVector<f64>, SourceError> {
            Ok(LogitVector::new(self.logits.clone()))
        }
    }

    fn fixed(logits: Vec<f64>) -> Fixed {
        let vocab = Vocabulary::new((0..logits.len()).map(|i| format!("t{i}")).collect()).unwrap();
        Fixed { vocab, logits }
    }

    fn plain() -> GenerationParams {
        GenerationParams { max_new_tokens: 1, repetition_penalty: 1.0, no_repeat_ngram: 0, ..Default::default() }
    }

    #[test]
    fn ngram_block_matches_reference_semantics() {
        // 1 2 3 1 2 -> emitting 3 would repeat "1 2 3"
        assert_eq!(banned_by_ngram(&[1, 2, 3, 1, 2], 3), HashSet::from([3]));
        assert!(banned_by_ngram(&[1, 2], 3).is_empty());
        assert_eq!(banned_by_ngram(&[4, 4], 2), HashSet::from([4]));
        assert!(banned_by_ngram(&[1, 2, 3], 0).is_empty());
    }

    #[test]
    fn repetition_penalty_direction() {
        let mut l = LogitVector::new(vec![2.0, -2.0, 2.0]);
        apply_repetition_penalty(&mut l, &[0, 1, 1], 2.0);
        assert_eq!(l.scores, vec![1.0, -4.0, 2.0]);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let mut src = fixed(vec![1.0, 3.0, 3.0]);
        let g = generate_unwatermarked(&mut src, &[0], &plain()).unwrap();
        assert_eq!(g.ids, vec![1]);
    }

    #[test]
    fn source_failure_keeps_partial_output() {
        struct Dies(Vocabulary, usize);
        impl LogitSource<f32> for Dies {
            fn vocabulary(&self) -> &Vocabulary {
                &self.0
            }
            fn next_logits(&mut self, _: &GenerationContext) -> Result<LogitVector<f32>, SourceError> {
                if self.1 == 0 {
                    return Err(SourceError::PeerExit);
                }
                self.1 -= 1;
                Ok(LogitVector::new(vec![0.0, 1.0]))
            }
        }
        let mut src = Dies(Vocabulary::new(vec!["a".into(), "b".into()]).unwrap(), 2);
        let params = GenerationParams { max_new_tokens: 5, no_repeat_ngram: 0, ..Default::default() };
        match generate(&mut src, &[0], None, None, &params) {
            Err(DecodeError::Source { source: SourceError::PeerExit, partial }) => assert_eq!(partial.ids, vec![1, 1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn eos_stops_generation() {
        let mut src = fixed(vec![0.0, 5.0]);
        let params = GenerationParams { max_new_tokens: 10, eos_token: Some(1), ..plain() };
        let g = generate_unwatermarked(&mut src, &[0], &params).unwrap();
        assert_eq!(g.ids, vec![1]);
        assert!(g.stopped_on_eos);
    }

    #[test]
    fn multinomial_is_seeded() {
        let mut src = fixed(vec![0.0, 0.1, 0.2, 0.3]);
        let params = GenerationParams { max_new_tokens: 30, sampling_mode: SamplingMode::Multinomial, seed: 9, ..plain() };
        let a = generate_unwatermarked(&mut src, &[0], &params).unwrap();
        let b = generate_unwatermarked(&mut src, &[0], &params).unwrap();
        assert_eq!(a, b);
        assert!(a.ids.iter().collect::<HashSet<_>>().len() > 1);
    }

    #[test]
    fn watermark_flips_a_close_call() {
        let key = WatermarkKey(5);
        let vocab_n = 64;
        let msg = WatermarkMessage::new(2024, 20).unwrap();
        let pred = SelectionPredicate::new(key, msg, 0.5).unwrap();
        let sentinel = key.sentinel_prev();
        let red = (0..vocab_n).find(|&w| !pred.is_green(w, sentinel)).unwrap();
        let green = (0..vocab_n).find(|&w| pred.is_green(w, sentinel)).unwrap();
        let mut logits = vec![-10.0; vocab_n as usize];
        logits[red as usize] = 1.0;
        logits[green as usize] = 0.5;
        let mut src = fixed(logits);
        let mut cfg = WatermarkConfig::new(msg, key);
        cfg.gamma = 0.0;
        let g = generate(&mut src, &[0], Some(&cfg), None, &plain()).unwrap();
        assert_eq!(g.ids, vec![green]);
        assert_eq!(g.traces[0].lm_argmax, Some(red));
        assert_eq!(g.traces[0].prev, sentinel);
        cfg.beta = 0.0;
        let g = generate(&mut src, &[0], Some(&cfg), None, &plain()).unwrap();
        assert_eq!(g.ids, vec![red]);
    }
}
