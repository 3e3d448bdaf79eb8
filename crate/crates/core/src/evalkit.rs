//! Metrics, the crop attack and parameter sweeps.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decode::{generate, DecodeError, Generation, TypeGuidance};
use crate::extract::{extract, is_extracted_as, ExtractMode, ExtractParams, ExtractionResult};
use crate::lexing::{LexTokenType, Lexer, TypeVocabMap};
use crate::lmsource::{NgramLm, NgramSource};
use crate::scalar::Scalar;
use crate::typepred::{TpOptions, TypePredictor};
use crate::types::{GenerationParams, TokenId, TypeError, WatermarkConfig, WatermarkKey, WatermarkMessage};

/// Extra weight of keyword unigrams in the weighted BLEU term.
pub const KEYWORD_WEIGHT: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no results to aggregate")]
    Empty,
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// CodeBLEU mixing weights. Only the n-gram and weighted n-gram terms are
/// computed; `mu` and `xi` (syntax and dataflow matches) are carried for
/// reference and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodeBleuWeights {
    pub eta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub xi: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        Self { eta: 0.1, lambda: 0.1, mu: 0.4, xi: 0.4 }
    }
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU with uniform weights over orders `1..=min(4, |c|, |r|)`,
/// no smoothing, and the usual brevity penalty. Unigram matches are weighted
/// by `unigram_weight`.
fn bleu_with(candidate: &[&str], reference: &[&str], unigram_weight: &dyn Fn(&str) -> f64) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let max_n = 4.min(candidate.len()).min(reference.len());
    if max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let (mut num, mut den) = (0.0, 0.0);
        for (g, &c) in &cand {
            let w = if n == 1 { unigram_weight(g[0]) } else { 1.0 };
            num += w * c.min(refc.get(g).copied().unwrap_or(0)) as f64;
            den += w * c as f64;
        }
        if num == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / max_n as f64).exp()
}

pub fn bleu(candidate: &[&str], reference: &[&str]) -> f64 {
    bleu_with(candidate, reference, &|_| 1.0)
}

/// BLEU with keyword unigrams counted `KEYWORD_WEIGHT` times.
pub fn weighted_bleu(candidate: &[&str], reference: &[&str], lexer: &dyn Lexer) -> f64 {
    bleu_with(candidate, reference, &|t| if lexer.is_keyword(t) { KEYWORD_WEIGHT } else { 1.0 })
}

/// Lexemes of `text` other than whitespace.
pub fn code_tokens<'a>(text: &'a str, lexer: &dyn Lexer) -> Vec<&'a str> {
    lexer.lex(text).lexemes.iter().filter(|l| l.ty != LexTokenType::Text).map(|l| l.text(text)).collect()
}

/// `(eta * BLEU + lambda * weighted BLEU) / (eta + lambda)` over code tokens.
pub fn bleu_proxy(candidate: &str, reference: &str, weights: &CodeBleuWeights, lexer: &dyn Lexer) -> f64 {
    let c = code_tokens(candidate, lexer);
    let r = code_tokens(reference, lexer);
    let total = weights.eta + weights.lambda;
    if total <= 0.0 {
        return 0.0;
    }
    (weights.eta * bleu(&c, &r) + weights.lambda * weighted_bleu(&c, &r, lexer)) / total
}

/// Share of `(embedded, result)` pairs where the embedded message came back.
pub fn extraction_rate(results: &[(WatermarkMessage, ExtractionResult)]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = results.iter().filter(|(m, r)| r.recovers(*m, 0)).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Which part of the sequence survives a crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// Keep the head: the end of the code is cut off.
    #[default]
    SuffixKeep,
    /// Keep the tail: the start of the code is cut off.
    PrefixKeep,
    /// Keep a window at a seeded random offset.
    RandomWindow,
}

impl std::str::FromStr for CropMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "suffix_keep" => Ok(CropMode::SuffixKeep),
            "prefix_keep" => Ok(CropMode::PrefixKeep),
            "random_window" => Ok(CropMode::RandomWindow),
            _ => Err(EvalError::InvalidParameter(format!("unknown crop mode {s:?}"))),
        }
    }
}

/// Number of tokens kept when cropping `len` tokens at `rate`:
/// `ceil((1 - rate) * len)`.
pub fn crop_keep(len: usize, rate: f64) -> usize {
    // The epsilon absorbs representation error, e.g. (1 - 0.7) * 10.
    (((1.0 - rate) * len as f64) - 1e-9).ceil().clamp(0.0, len as f64) as usize
}

/// Keep a contiguous window of `crop_keep(len, rate)` tokens.
pub fn crop_attack(ids: &[TokenId], rate: f64, mode: CropMode, seed: u64) -> Result<Vec<TokenId>, EvalError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(EvalError::InvalidParameter(format!("crop rate must be in [0, 1), got {rate}")));
    }
    let keep = crop_keep(ids.len(), rate);
    let start = match mode {
        CropMode::SuffixKeep => 0,
        CropMode::PrefixKeep => ids.len() - keep,
        CropMode::RandomWindow => ChaCha8Rng::seed_from_u64(seed).gen_range(0..=ids.len() - keep),
    };
    Ok(ids[start..start + keep].to_vec())
}

/// A prompt cut from a corpus document and the text that really followed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCase {
    pub prompt: String,
    pub prompt_ids: Vec<TokenId>,
    /// LM tokens of the corpus text after the prompt.
    pub continuation_ids: Vec<TokenId>,
}

/// One prompt per document with a `def` line: the document up to the colon
/// ending its first `def` line (comment and signature). The continuation
/// runs on through the following documents so every case can supply
/// `min_continuation` reference tokens.
pub fn prompt_suite(docs: &[&str], lm: &NgramLm, lexer: &dyn Lexer, min_continuation: usize) -> Vec<PromptCase> {
    let mut cases = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        let Some(def_at) = doc.find("def ") else { continue };
        let Some(colon) = doc[def_at..].find(":\n").map(|c| def_at + c + 1) else { continue };
        let prompt = &doc[..colon];
        let mut rest = doc[colon..].to_string();
        let mut continuation_ids = lm.encode(&rest, lexer);
        let mut next = i + 1;
        while continuation_ids.len() < min_continuation && next < docs.len() {
            rest.push_str(docs[next]);
            continuation_ids = lm.encode(&rest, lexer);
            next += 1;
        }
        if continuation_ids.len() < min_continuation {
            continue;
        }
        continuation_ids.truncate(min_continuation);
        cases.push(PromptCase { prompt: prompt.to_string(), prompt_ids: lm.encode(prompt, lexer), continuation_ids });
    }
    cases
}

/// `count` windows of `len` LM tokens spread evenly over the corpus.
pub fn corpus_snippets(docs: &[&str], lm: &NgramLm, lexer: &dyn Lexer, count: usize, len: usize) -> Vec<Vec<TokenId>> {
    let stream: Vec<TokenId> = docs.iter().flat_map(|d| lm.encode(d, lexer)).collect();
    if stream.len() < len || count == 0 {
        return Vec::new();
    }
    let span = stream.len() - len;
    (0..count).map(|k| {
        let start = if count == 1 { 0 } else { k * span / (count - 1) };
        stream[start..start + len].to_vec()
    })
    .collect()
}

/// Number of `snippets` from which `target` is extracted.
pub fn false_positive_count(snippets: &[Vec<TokenId>], target: WatermarkMessage, params: &ExtractParams) -> Result<usize, EvalError> {
    let hits: Result<Vec<bool>, TypeError> = snippets.par_iter().map(|s| is_extracted_as(s, target, params)).collect();
    Ok(hits?.into_iter().filter(|&h| h).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Beta,
    Gamma,
    Length,
    CropRate,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Length => "length",
            SweepAxis::CropRate => "crop_rate",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "beta" => Ok(SweepAxis::Beta),
            "gamma" => Ok(SweepAxis::Gamma),
            "length" => Ok(SweepAxis::Length),
            "crop_rate" | "crop" => Ok(SweepAxis::CropRate),
            _ => Err(EvalError::InvalidParameter(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// A one-dimensional sweep. Fields other than the swept one stay fixed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPlan {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Generated tokens per trial.
    pub length: usize,
    pub crop_rate: f64,
    pub crop_mode: CropMode,
    /// Apply type guidance (with weight `gamma`).
    pub type_guidance: bool,
    pub seed: u64,
}

impl SweepPlan {
    pub fn new(axis: SweepAxis, grid: Vec<f64>) -> Self {
        Self {
            axis,
            grid,
            trials: 100,
            beta: 5.0,
            gamma: 3.0,
            length: 200,
            crop_rate: 0.0,
            crop_mode: CropMode::SuffixKeep,
            type_guidance: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidParameter(m));
        if self.grid.is_empty() {
            return bad("sweep grid is empty".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        for &v in &self.grid {
            let ok = match self.axis {
                SweepAxis::Beta | SweepAxis::Gamma => v >= 0.0 && v.is_finite(),
                SweepAxis::Length => v >= 1.0 && v.fract() == 0.0,
                SweepAxis::CropRate => (0.0..1.0).contains(&v),
            };
            if !ok {
                return bad(format!("{} is not a valid {} value", v, self.axis.name()));
            }
        }
        Ok(())
    }

    /// (beta, gamma, length, crop_rate) at grid value `v`.
    fn point(&self, v: f64) -> (f64, f64, usize, f64) {
        match self.axis {
            SweepAxis::Beta => (v, self.gamma, self.length, self.crop_rate),
            SweepAxis::Gamma => (self.beta, v, self.length, self.crop_rate),
            SweepAxis::Length => (self.beta, self.gamma, v as usize, self.crop_rate),
            SweepAxis::CropRate => (self.beta, self.gamma, self.length, v),
        }
    }

    fn max_length(&self) -> usize {
        match self.axis {
            SweepAxis::Length => self.grid.iter().fold(0.0f64, |a, &b| a.max(b)) as usize,
            _ => self.length,
        }
    }
}

/// Outcome of one trial at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub prompt: usize,
    pub message: WatermarkMessage,
    pub extracted: WatermarkMessage,
    pub score: u32,
    pub margin: u32,
    pub pairs: usize,
    pub bleu_proxy: f64,
    pub divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub trials: usize,
    pub extraction_rate: f64,
    /// BLEU + weighted BLEU only; see [`CodeBleuWeights`].
    pub mean_bleu_proxy: f64,
    pub mean_margin: f64,
    pub mean_divergence: f64,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub plan: SweepPlan,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},trials,extraction_rate,mean_bleu_proxy,mean_margin,mean_divergence\n", self.plan.axis.name());
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.value, r.trials, r.extraction_rate, r.mean_bleu_proxy, r.mean_margin, r.mean_divergence
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Whitespace-separated columns for plotting extraction rate (and the
    /// utility proxy) against the swept value.
    pub fn plot_data(&self) -> String {
        let mut out = format!("# {} extraction_rate mean_bleu_proxy\n", self.plan.axis.name());
        for r in &self.rows {
            out.push_str(&format!("{} {:.6} {:.6}\n", r.value, r.extraction_rate, r.mean_bleu_proxy));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct GenKey {
    beta: u64,
    gamma: u64,
    guided: bool,
    prompt: usize,
    message: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ExtractKey {
    ids: Vec<TokenId>,
    cropped: bool,
    key: WatermarkKey,
    bits: u8,
    green_fraction: u64,
}

/// Everything a sweep needs: the LM, the type-guidance parts, the key and
/// the prompts. Generations and extractions are cached, so sweeps that share
/// settings (the same beta, gamma and message on the same prompt) decode and
/// search only once.
pub struct Pipeline<'a, S> {
    pub lm: &'a NgramLm,
    pub lexer: &'a dyn Lexer,
    /// Only needed for guided sweeps.
    pub predictor: Option<&'a TypePredictor<S>>,
    pub map: &'a TypeVocabMap,
    pub key: WatermarkKey,
    pub bits: u8,
    pub green_fraction: f64,
    pub generation: GenerationParams,
    pub tp_options: TpOptions,
    pub weights: CodeBleuWeights,
    pub prompts: Vec<PromptCase>,
    cache: Mutex<HashMap<GenKey, Arc<Generation>>>,
    extractions: Mutex<HashMap<ExtractKey, ExtractionResult>>,
}

impl<'a, S: Scalar> Pipeline<'a, S> {
    pub fn new(
        lm: &'a NgramLm,
        lexer: &'a dyn Lexer,
        predictor: Option<&'a TypePredictor<S>>,
        map: &'a TypeVocabMap,
        key: WatermarkKey,
        prompts: Vec<PromptCase>,
    ) -> Self {
        Self {
            lm,
            lexer,
            predictor,
            map,
            key,
            bits: crate::types::DEFAULT_BITS,
            green_fraction: 0.5,
            generation: GenerationParams::default(),
            tp_options: TpOptions::default(),
            weights: CodeBleuWeights::default(),
            prompts,
            cache: Mutex::new(HashMap::new()),
            extractions: Mutex::new(HashMap::new()),
        }
    }

    /// Message and prompt index of `trial` under `seed`.
    pub fn trial_setup(&self, seed: u64, trial: usize) -> (WatermarkMessage, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let value = rng.gen_range(0..WatermarkMessage::space(self.bits));
        let message = WatermarkMessage::new(value, self.bits).expect("value drawn inside the space");
        (message, trial % self.prompts.len().max(1))
    }

    /// Watermarked generation of at least `len` tokens (cached).
    pub fn generate(
        &self,
        prompt: usize,
        message: WatermarkMessage,
        beta: f64,
        gamma: f64,
        guided: bool,
        len: usize,
    ) -> Result<Arc<Generation>, EvalError> {
        let key = GenKey { beta: beta.to_bits(), gamma: gamma.to_bits(), guided, prompt, message: message.value() };
        if let Some(g) = self.cache.lock().expect("cache lock").get(&key) {
            if g.ids.len() >= len {
                return Ok(Arc::clone(g));
            }
        }
        let mut wm = WatermarkConfig::new(message, self.key);
        wm.beta = beta;
        wm.gamma = gamma;
        wm.green_fraction = self.green_fraction;
        let params = GenerationParams { max_new_tokens: len, ..self.generation.clone() };
        let guidance = match (guided, self.predictor) {
            (false, _) => None,
            (true, Some(predictor)) => {
                Some(TypeGuidance { predictor, map: self.map, lexer: self.lexer, options: self.tp_options })
            }
            (true, None) => return Err(EvalError::InvalidParameter("type guidance needs a predictor".into())),
        };
        let mut source = NgramSource(self.lm);
        let case = self.prompts.get(prompt).ok_or_else(|| EvalError::InvalidParameter(format!("no prompt {prompt}")))?;
        let g = Arc::new(generate(&mut source, &case.prompt_ids, Some(&wm), guidance.as_ref(), &params)?);
        self.cache.lock().expect("cache lock").insert(key, Arc::clone(&g));
        Ok(g)
    }

    /// [`extract`] with the pipeline's key and width (cached).
    pub fn extract(&self, ids: Vec<TokenId>, mode: ExtractMode) -> Result<ExtractionResult, EvalError> {
        let key = ExtractKey {
            ids,
            cropped: mode == ExtractMode::Cropped,
            key: self.key,
            bits: self.bits,
            green_fraction: self.green_fraction.to_bits(),
        };
        if let Some(r) = self.extractions.lock().expect("cache lock").get(&key) {
            return Ok(*r);
        }
        let params = ExtractParams { key: self.key, bits: self.bits, green_fraction: self.green_fraction, mode };
        let result = extract(&key.ids, &params)?;
        self.extractions.lock().expect("cache lock").insert(key, result);
        Ok(result)
    }

    fn run_trial(&self, plan: &SweepPlan, value: f64, trial: usize) -> Result<TrialRecord, EvalError> {
        let (beta, gamma, len, crop_rate) = plan.point(value);
        let (message, prompt) = self.trial_setup(plan.seed, trial);
        let generation = self.generate(prompt, message, beta, gamma, plan.type_guidance, plan.max_length())?;
        let ids = &generation.ids[..len.min(generation.ids.len())];
        let (scored, mode) = if crop_rate > 0.0 {
            let crop_seed = plan.seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            (crop_attack(ids, crop_rate, plan.crop_mode, crop_seed)?, ExtractMode::Cropped)
        } else {
            (ids.to_vec(), ExtractMode::FromStart)
        };
        let result = self.extract(scored, mode)?;
        let case = &self.prompts[prompt];
        let reference = self.lm.decode(&case.continuation_ids[..len.min(case.continuation_ids.len())]);
        let candidate = self.lm.decode(ids);
        let steps = &generation.traces[..ids.len()];
        let diverged = steps.iter().filter(|t| t.lm_argmax != Some(t.chosen)).count();
        Ok(TrialRecord {
            trial,
            prompt,
            message,
            extracted: result.best_message,
            score: result.best_score,
            margin: result.margin,
            pairs: result.pairs,
            bleu_proxy: bleu_proxy(&candidate, &reference, &self.weights, self.lexer),
            divergence: if steps.is_empty() { 0.0 } else { diverged as f64 / steps.len() as f64 },
        })
    }

    /// Run every grid point of `plan`; rows come back in grid order.
    pub fn run_sweep(&self, plan: &SweepPlan) -> Result<SweepReport, EvalError> {
        plan.validate()?;
        if self.prompts.is_empty() {
            return Err(EvalError::InvalidParameter("pipeline has no prompts".into()));
        }
        let mut rows = Vec::with_capacity(plan.grid.len());
        for &value in &plan.grid {
            let records: Vec<TrialRecord> =
                (0..plan.trials).into_par_iter().map(|t| self.run_trial(plan, value, t)).collect::<Result<_, _>>()?;
            let n = records.len() as f64;
            let hits = records.iter().filter(|r| r.extracted == r.message).count();
            rows.push(SweepRow {
                value,
                trials: records.len(),
                extraction_rate: hits as f64 / n,
                mean_bleu_proxy: records.iter().map(|r| r.bleu_proxy).sum::<f64>() / n,
                mean_margin: records.iter().map(|r| r.margin as f64).sum::<f64>() / n,
                mean_divergence: records.iter().map(|r| r.divergence).sum::<f64>() / n,
                records,
            });
        }
        Ok(SweepReport { schema_version: 1, plan: plan.clone(), rows })
    }
}

/// `run_sweep` as a free function.
pub fn run_sweep<S: Scalar>(plan: &SweepPlan, pipeline: &Pipeline<'_, S>) -> Result<SweepReport, EvalError> {
    pipeline.run_sweep(plan)
}
