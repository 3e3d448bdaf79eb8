//! Next-lexical-type predictor and the type-guidance logit.
//!
//! The predictor is an embedding + single-layer LSTM + linear read-out over
//! the last `n` lexical types (left-padded with a reserved PAD symbol). It is
//! trained with next-type cross-entropy, truncated back-propagation over
//! windows of `n` steps and Adam, all seeded and single-threaded.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binfmt::{FormatError, Reader, Writer};
use crate::lexing::{LexTokenType, LexTypeSequence, Lexer, TypeVocabMap};
use crate::scalar::{argmax, lit, softmax, Scalar};
use crate::types::{GenerationContext, LogitVector, Vocabulary};

const N_TYPES: usize = LexTokenType::COUNT;
/// Input symbols: the twelve types plus PAD.
const N_SYMBOLS: usize = N_TYPES + 1;
const PAD: usize = N_TYPES;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("corpus too small: {lexemes} lexemes, need at least {needed}")]
    CorpusTooSmall { lexemes: usize, needed: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("predictor file: {0}")]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTrainingConfig {
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// Share of documents held out for the accuracy estimate. With fewer
    /// than five documents the tail of the type stream is held out instead.
    pub holdout_fraction: f64,
    /// Upper bound on held-out positions scored.
    pub max_eval_positions: usize,
}

impl Default for PredictorTrainingConfig {
    fn default() -> Self {
        Self {
            context_window: 32,
            embed_dim: 64,
            hidden_dim: 128,
            epochs: 4,
            learning_rate: 0.005,
            batch_size: 16,
            grad_clip: 5.0,
            seed: 0,
            holdout_fraction: 0.1,
            max_eval_positions: 3000,
        }
    }
}

impl PredictorTrainingConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::InvalidConfig(m.to_string()));
        if self.context_window == 0 {
            return bad("context_window must be at least 1");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim and hidden_dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    e: usize,
    h: usize,
}

impl Layout {
    fn g(&self) -> usize {
        4 * self.h
    }
    fn emb(&self) -> usize {
        0
    }
    fn wx(&self) -> usize {
        N_SYMBOLS * self.e
    }
    fn wh(&self) -> usize {
        self.wx() + self.g() * self.e
    }
    fn b(&self) -> usize {
        self.wh() + self.g() * self.h
    }
    fn wo(&self) -> usize {
        self.b() + self.g()
    }
    fn bo(&self) -> usize {
        self.wo() + N_TYPES * self.h
    }
    fn len(&self) -> usize {
        self.bo() + N_TYPES
    }
}

/// Next-type prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct TypePrediction<S> {
    pub ty: LexTokenType,
    /// Probability per type, in [`LexTokenType::ALL`] order.
    pub scores: Vec<S>,
}

/// Trained recurrent next-type classifier.
#[derive(Debug, Clone)]
pub struct TypePredictor<S> {
    layout: Layout,
    context_window: usize,
    params: Vec<S>,
    lexer_name: String,
    heldout_accuracy: f64,
    seed: u64,
    /// Cached [`Self::input_table`] of the final parameters.
    table: Vec<S>,
}

// The cached table is derived state and takes no part in equality.
impl<S: PartialEq> PartialEq for TypePredictor<S> {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.context_window == other.context_window
            && self.params == other.params
            && self.lexer_name == other.lexer_name
            && self.heldout_accuracy == other.heldout_accuracy
            && self.seed == other.seed
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<S: Scalar>(out: &mut [S], a: S, x: &[S]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

impl<S: Scalar> TypePredictor<S> {
    fn init(cfg: &PredictorTrainingConfig, lexer_name: &str) -> Self {
        let layout = Layout { e: cfg.embed_dim, h: cfg.hidden_dim };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = vec![S::zero(); layout.len()];
        let k = 1.0 / (layout.h as f64).sqrt();
        for (i, p) in params.iter_mut().enumerate() {
            let bound = if i < layout.wx() { 1.0 } else { k };
            *p = lit(rng.gen_range(-bound..bound));
        }
        // forget-gate bias starts at 1
        for j in layout.h..2 * layout.h {
            params[layout.b() + j] = S::one();
        }
        for p in &mut params[layout.bo()..] {
            *p = S::zero();
        }
        Self {
            layout,
            context_window: cfg.context_window,
            params,
            lexer_name: lexer_name.to_string(),
            heldout_accuracy: 0.0,
            seed: cfg.seed,
            table: Vec::new(),
        }
    }

    pub fn context_window(&self) -> usize {
        self.context_window
    }

    pub fn embed_dim(&self) -> usize {
        self.layout.e
    }

    pub fn hidden_dim(&self) -> usize {
        self.layout.h
    }

    pub fn lexer_name(&self) -> &str {
        &self.lexer_name
    }

    /// Accuracy on held-out positions measured at the end of training.
    pub fn heldout_accuracy(&self) -> f64 {
        self.heldout_accuracy
    }

    /// `Wx * emb[s] + b` for every input symbol.
    fn input_table(&self) -> Vec<S> {
        let Layout { e, .. } = self.layout;
        let g = self.layout.g();
        let mut table = vec![S::zero(); N_SYMBOLS * g];
        for s in 0..N_SYMBOLS {
            let emb = &self.params[self.layout.emb() + s * e..][..e];
            for r in 0..g {
                let row = &self.params[self.layout.wx() + r * e..][..e];
                table[s * g + r] = dot(row, emb) + self.params[self.layout.b() + r];
            }
        }
        table
    }

    /// Read-out logits after feeding `window` from a zero state.
    fn forward_window(&self, table: &[S], window: &[usize]) -> Vec<S> {
        let h_dim = self.layout.h;
        let g = self.layout.g();
        let mut h = vec![S::zero(); h_dim];
        let mut c = vec![S::zero(); h_dim];
        let mut gates = vec![S::zero(); g];
        for &sym in window {
            let wh = &self.params[self.layout.wh()..][..g * h_dim];
            for r in 0..g {
                gates[r] = table[sym * g + r] + dot(&wh[r * h_dim..][..h_dim], &h);
            }
            for j in 0..h_dim {
                let i = sigmoid(gates[j]);
                let f = sigmoid(gates[h_dim + j]);
                let gg = gates[2 * h_dim + j].tanh();
                let o = sigmoid(gates[3 * h_dim + j]);
                c[j] = f * c[j] + i * gg;
                h[j] = o * c[j].tanh();
            }
        }
        let wo = &self.params[self.layout.wo()..][..N_TYPES * h_dim];
        (0..N_TYPES)
            .map(|t| dot(&wo[t * h_dim..][..h_dim], &h) + self.params[self.layout.bo() + t])
            .collect()
    }

    fn window_for(&self, types: &[LexTokenType]) -> Vec<usize> {
        let n = self.context_window;
        let tail = &types[types.len().saturating_sub(n)..];
        let mut window = vec![PAD; n - tail.len()];
        window.extend(tail.iter().map(|t| t.index()));
        window
    }

    /// Predict the type of the lexeme following `types`.
    pub fn predict(&self, types: &[LexTokenType]) -> TypePrediction<S> {
        if self.table.is_empty() {
            return self.predict_with(&self.input_table(), types);
        }
        self.predict_with(&self.table, types)
    }

    fn predict_with(&self, table: &[S], types: &[LexTokenType]) -> TypePrediction<S> {
        let scores = softmax(&self.forward_window(table, &self.window_for(types)));
        let ty = LexTokenType::from_index(argmax(&scores).unwrap_or(0)).unwrap_or(LexTokenType::Other);
        TypePrediction { ty, scores }
    }

    /// Fraction of `positions` (sequence, target index) predicted correctly.
    fn accuracy(&self, seqs: &[Vec<LexTokenType>], positions: &[(usize, usize)]) -> f64 {
        if positions.is_empty() {
            return 0.0;
        }
        let table = self.input_table();
        let hits = positions
            .iter()
            .filter(|&&(d, i)| self.predict_with(&table, &seqs[d][..i]).ty == seqs[d][i])
            .count();
        hits as f64 / positions.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.magic(MAGIC, VERSION);
        w.u8(S::BYTES as u8);
        w.str(&self.lexer_name);
        w.u32(self.context_window as u32);
        w.u32(self.layout.e as u32);
        w.u32(self.layout.h as u32);
        w.f64(self.heldout_accuracy);
        w.u64(self.seed);
        w.scalars(&self.params);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PredictorError> {
        let mut r = Reader::new(bytes);
        let version = r.magic(MAGIC, "GMTPRED")?;
        if version != VERSION {
            return Err(FormatError::Version(version).into());
        }
        let width = r.u8()? as usize;
        if width != S::BYTES {
            return Err(FormatError::Invalid(format!("weights are {width}-byte floats, expected {}", S::BYTES)).into());
        }
        let lexer_name = r.str()?;
        let context_window = r.u32()? as usize;
        let e = r.u32()? as usize;
        let h = r.u32()? as usize;
        if context_window == 0 || e == 0 || h == 0 || e > 4096 || h > 4096 {
            return Err(FormatError::Invalid(format!("dimensions n={context_window} e={e} h={h}")).into());
        }
        let heldout_accuracy = r.f64()?;
        let seed = r.u64()?;
        let layout = Layout { e, h };
        let params = r.scalars(layout.len())?;
        r.finish()?;
        let mut model = Self { layout, context_window, params, lexer_name, heldout_accuracy, seed, table: Vec::new() };
        model.table = model.input_table();
        Ok(model)
    }
}

const MAGIC: &[u8; 8] = b"GMTPRED\0";
const VERSION: u32 = 1;

/// Forward activations of one training window.
struct Tape<S> {
    syms: Vec<usize>,
    /// i, f, g, o after their nonlinearities, `4h` per step.
    acts: Vec<S>,
    c: Vec<S>,
    tanh_c: Vec<S>,
    h: Vec<S>,
}

struct Trainer<'a, S> {
    model: &'a mut TypePredictor<S>,
    grad: Vec<S>,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Trainer<'_, S> {
    /// Add the gradient of the summed cross-entropy of one window, scaled by
    /// `scale`. `dtable` collects gradients w.r.t. the input table rows.
    fn accumulate(&mut self, table: &[S], dtable: &mut [S], input: &[usize], target: &[usize], scale: S) -> f64 {
        let model = &*self.model;
        let lay = model.layout;
        let (hd, g) = (lay.h, lay.g());
        let steps = input.len();
        let mut tape = Tape {
            syms: input.to_vec(),
            acts: vec![S::zero(); steps * g],
            c: vec![S::zero(); steps * hd],
            tanh_c: vec![S::zero(); steps * hd],
            h: vec![S::zero(); steps * hd],
        };
        let wh = &model.params[lay.wh()..][..g * hd];
        let wo = &model.params[lay.wo()..][..N_TYPES * hd];
        let zero = vec![S::zero(); hd];
        let mut loss = 0.0;
        let mut dlogits = vec![S::zero(); steps * N_TYPES];
        for t in 0..steps {
            let (prev_h, prev_c) = if t == 0 {
                (&zero[..], &zero[..])
            } else {
                (&tape.h[(t - 1) * hd..][..hd], &tape.c[(t - 1) * hd..][..hd])
            };
            let sym = tape.syms[t];
            let acts = &mut tape.acts[t * g..][..g];
            for r in 0..g {
                acts[r] = table[sym * g + r] + dot(&wh[r * hd..][..hd], prev_h);
            }
            let mut c_new = vec![S::zero(); hd];
            let mut th = vec![S::zero(); hd];
            let mut h_new = vec![S::zero(); hd];
            for j in 0..hd {
                let i = sigmoid(acts[j]);
                let f = sigmoid(acts[hd + j]);
                let gg = acts[2 * hd + j].tanh();
                let o = sigmoid(acts[3 * hd + j]);
                acts[j] = i;
                acts[hd + j] = f;
                acts[2 * hd + j] = gg;
                acts[3 * hd + j] = o;
                c_new[j] = f * prev_c[j] + i * gg;
                th[j] = c_new[j].tanh();
                h_new[j] = o * th[j];
            }
            tape.c[t * hd..][..hd].copy_from_slice(&c_new);
            tape.tanh_c[t * hd..][..hd].copy_from_slice(&th);
            tape.h[t * hd..][..hd].copy_from_slice(&h_new);
            if target[t] != PAD {
                let logits: Vec<S> = (0..N_TYPES)
                    .map(|k| dot(&wo[k * hd..][..hd], &h_new) + model.params[lay.bo() + k])
                    .collect();
                let p = softmax(&logits);
                loss -= p[target[t]].to_f64().unwrap_or(0.0).max(1e-30).ln();
                let d = &mut dlogits[t * N_TYPES..][..N_TYPES];
                for k in 0..N_TYPES {
                    d[k] = (p[k] - if k == target[t] { S::one() } else { S::zero() }) * scale;
                }
            }
        }

        let mut dh_next = vec![S::zero(); hd];
        let mut dc_next = vec![S::zero(); hd];
        let mut dgates = vec![S::zero(); g];
        for t in (0..steps).rev() {
            let h_t = &tape.h[t * hd..][..hd];
            let mut dh = dh_next.clone();
            let d = &dlogits[t * N_TYPES..][..N_TYPES];
            if target[t] != PAD {
                for k in 0..N_TYPES {
                    axpy(&mut self.grad[lay.wo() + k * hd..][..hd], d[k], h_t);
                    self.grad[lay.bo() + k] += d[k];
                    axpy(&mut dh, d[k], &model.params[lay.wo() + k * hd..][..hd]);
                }
            }
            let acts = &tape.acts[t * g..][..g];
            let prev_c: &[S] = if t == 0 { &zero } else { &tape.c[(t - 1) * hd..][..hd] };
            let th = &tape.tanh_c[t * hd..][..hd];
            for j in 0..hd {
                let (i, f, gg, o) = (acts[j], acts[hd + j], acts[2 * hd + j], acts[3 * hd + j]);
                let dc = dc_next[j] + dh[j] * o * (S::one() - th[j] * th[j]);
                dgates[j] = dc * gg * i * (S::one() - i);
                dgates[hd + j] = dc * prev_c[j] * f * (S::one() - f);
                dgates[2 * hd + j] = dc * i * (S::one() - gg * gg);
                dgates[3 * hd + j] = dh[j] * th[j] * o * (S::one() - o);
                dc_next[j] = dc * f;
            }
            axpy(&mut dtable[tape.syms[t] * g..][..g], S::one(), &dgates);
            dh_next.iter_mut().for_each(|x| *x = S::zero());
            if t > 0 {
                let prev_h = &tape.h[(t - 1) * hd..][..hd];
                for r in 0..g {
                    axpy(&mut self.grad[lay.wh() + r * hd..][..hd], dgates[r], prev_h);
                    axpy(&mut dh_next, dgates[r], &wh[r * hd..][..hd]);
                }
            }
        }
        loss
    }

    /// Push input-table gradients back to the embedding, `Wx` and `b`.
    fn fold_table_grad(&mut self, dtable: &[S]) {
        let lay = self.model.layout;
        let (e, g) = (lay.e, lay.g());
        for s in 0..N_SYMBOLS {
            let dp = &dtable[s * g..][..g];
            if dp.iter().all(|x| x.is_zero()) {
                continue;
            }
            let emb: Vec<S> = self.model.params[lay.emb() + s * e..][..e].to_vec();
            for r in 0..g {
                axpy(&mut self.grad[lay.wx() + r * e..][..e], dp[r], &emb);
                self.grad[lay.b() + r] += dp[r];
                let row: Vec<S> = self.model.params[lay.wx() + r * e..][..e].to_vec();
                axpy(&mut self.grad[lay.emb() + s * e..][..e], dp[r], &row);
            }
        }
    }

    fn adam_step(&mut self, lr: f64, clip: f64) {
        let norm = self.grad.iter().map(|g| g.to_f64().unwrap_or(0.0).powi(2)).sum::<f64>().sqrt();
        let clip_scale: S = lit(if norm > clip { clip / norm } else { 1.0 });
        self.t += 1;
        let (b1, b2): (S, S) = (lit(0.9), lit(0.999));
        let step: S = lit(lr * (1.0 - 0.999f64.powi(self.t)).sqrt() / (1.0 - 0.9f64.powi(self.t)));
        let eps: S = lit(1e-8);
        for k in 0..self.grad.len() {
            let gk = self.grad[k] * clip_scale;
            self.m[k] = b1 * self.m[k] + (S::one() - b1) * gk;
            self.v[k] = b2 * self.v[k] + (S::one() - b2) * gk * gk;
            self.model.params[k] -= step * self.m[k] / (self.v[k].sqrt() + eps);
            self.grad[k] = S::zero();
        }
    }
}

/// Train a predictor on `corpus` and record its held-out accuracy.
pub fn train_predictor<S: Scalar>(
    cfg: &PredictorTrainingConfig,
    corpus: &[&str],
    lexer: &dyn Lexer,
) -> Result<TypePredictor<S>, PredictorError> {
    cfg.validate()?;
    let n = cfg.context_window;
    let seqs: Vec<Vec<LexTokenType>> = corpus.iter().map(|d| lexer.tokenize(d).types).collect();
    let total: usize = seqs.iter().map(Vec::len).sum();
    if total < 10 * n {
        return Err(PredictorError::CorpusTooSmall { lexemes: total, needed: 10 * n });
    }

    // (sequence index, first held-out target index)
    let mut train_until: Vec<usize> = seqs.iter().map(Vec::len).collect();
    if seqs.len() >= 5 {
        let held = ((seqs.len() as f64 * cfg.holdout_fraction).ceil() as usize).clamp(1, seqs.len() - 1);
        for t in &mut train_until[seqs.len() - held..] {
            *t = 0;
        }
    } else {
        // Hold out the tail of the longest sequence.
        let (d, len) = seqs.iter().map(Vec::len).enumerate().max_by_key(|&(i, l)| (l, usize::MAX - i)).unwrap();
        train_until[d] = len - ((len as f64 * cfg.holdout_fraction).ceil() as usize).min(len);
    }
    let mut heldout: Vec<(usize, usize)> = Vec::new();
    for (d, s) in seqs.iter().enumerate() {
        heldout.extend((train_until[d]..s.len()).map(|i| (d, i)));
    }
    if heldout.len() > cfg.max_eval_positions {
        let stride = heldout.len() as f64 / cfg.max_eval_positions as f64;
        heldout = (0..cfg.max_eval_positions).map(|k| heldout[(k as f64 * stride) as usize]).collect();
    }

    // Symbol streams PAD^n ++ types, training part only.
    let streams: Vec<Vec<usize>> = seqs
        .iter()
        .zip(&train_until)
        .filter(|(_, &until)| until > 0)
        .map(|(s, &until)| std::iter::repeat(PAD).take(n).chain(s[..until].iter().map(|t| t.index())).collect())
        .collect();

    let mut model = TypePredictor::<S>::init(cfg, lexer.name());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7470_7265_6400_0000);
    let plen = model.params.len();
    let mut trainer = Trainer { model: &mut model, grad: vec![S::zero(); plen], m: vec![S::zero(); plen], v: vec![S::zero(); plen], t: 0 };
    for epoch in 0..cfg.epochs {
        let offset = (epoch * 7) % n;
        let mut windows: Vec<(usize, usize)> = Vec::new();
        for (d, s) in streams.iter().enumerate() {
            let mut start = offset;
            while start + 1 < s.len() {
                windows.push((d, start));
                start += n;
            }
        }
        windows.shuffle(&mut rng);
        for batch in windows.chunks(cfg.batch_size) {
            let targets: usize = batch
                .iter()
                .map(|&(d, st)| streams[d][st + 1..(st + n + 1).min(streams[d].len())].iter().filter(|&&x| x != PAD).count())
                .sum();
            if targets == 0 {
                continue;
            }
            let scale: S = lit(1.0 / targets as f64);
            let table = trainer.model.input_table();
            let mut dtable = vec![S::zero(); table.len()];
            for &(d, st) in batch {
                let end = (st + n).min(streams[d].len() - 1);
                let input = &streams[d][st..end];
                let target = &streams[d][st + 1..end + 1];
                trainer.accumulate(&table, &mut dtable, input, target, scale);
            }
            trainer.fold_table_grad(&dtable);
            trainer.adam_step(cfg.learning_rate, cfg.grad_clip);
        }
    }
    model.table = model.input_table();
    model.heldout_accuracy = model.accuracy(&seqs, &heldout);
    Ok(model)
}

/// `predict_next_type` on a lexed sequence.
pub fn predict_next_type<S: Scalar>(pred: &TypePredictor<S>, types: &LexTypeSequence) -> TypePrediction<S> {
    pred.predict(&types.types)
}

/// Switches for the type-guidance logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpOptions {
    /// When the text ends inside a lexeme that could still grow, also allow
    /// tokens of that lexeme's type.
    pub continuation: bool,
    /// Weight each token by the predicted probability of its type instead of
    /// the 0/1 indicator of the top type.
    pub confidence_weighted: bool,
}

impl Default for TpOptions {
    fn default() -> Self {
        Self { continuation: true, confidence_weighted: false }
    }
}

/// What the type-guidance step saw and decided.
#[derive(Debug, Clone, PartialEq)]
pub struct TpStep<S> {
    pub logits: LogitVector<S>,
    pub predicted: LexTokenType,
    /// Type of the in-progress lexeme, when the continuation set was added.
    pub continuation: Option<LexTokenType>,
}

/// Type-guidance logit for the next position of `ctx`.
///
/// The prompt and generated tokens are detokenized and re-lexed, the
/// predictor names the next lexical type, and every vocabulary token in that
/// type's partition gets 1.
pub fn tp_logits<S: Scalar>(
    pred: &TypePredictor<S>,
    ctx: &GenerationContext,
    lexer: &dyn Lexer,
    map: &TypeVocabMap,
    vocab: &Vocabulary,
    opts: TpOptions,
) -> TpStep<S> {
    let ids: Vec<_> = ctx.all_ids().collect();
    let text = vocab.detokenize(&ids);
    let seq = lexer.tokenize(&text);
    let prediction = predict_next_type(pred, &seq);
    let continuation = if opts.continuation && seq.trailing_partial { seq.partial_type } else { None };
    let mut scores = vec![S::zero(); map.vocab_size()];
    if opts.confidence_weighted {
        for (id, s) in scores.iter_mut().enumerate() {
            *s = prediction.scores[map.type_of(id as u32).index()];
        }
        if let Some(ty) = continuation {
            let top = prediction.scores[prediction.ty.index()];
            for &id in map.members(ty) {
                let s = &mut scores[id as usize];
                *s = s.max(top);
            }
        }
    } else {
        for &id in map.members(prediction.ty) {
            scores[id as usize] = S::one();
        }
        if let Some(ty) = continuation {
            for &id in map.members(ty) {
                scores[id as usize] = S::one();
            }
        }
    }
    TpStep { logits: LogitVector::new(scores), predicted: prediction.ty, continuation }
}
