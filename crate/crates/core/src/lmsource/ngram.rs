use std::collections::{BTreeSet, HashMap};

use crate::binfmt::{FormatError, Reader, Writer};
use crate::lexing::Lexer;
use crate::scalar::Scalar;
use crate::types::{GenerationContext, LogitVector, TokenId, Vocabulary};

use super::{LogitSource, SourceError};

pub const UNK: &str = "<unk>";

/// How text is cut into LM tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenizerKind {
    /// One token per lexeme.
    #[default]
    Lexeme,
    /// Every lexeme split into chunks of at most two characters, so tokens
    /// cut across lexeme boundaries the way subword vocabularies do.
    CharPair,
}

impl TokenizerKind {
    pub fn split(self, text: &str, lexer: &dyn Lexer) -> Vec<String> {
        let out = lexer.lex(text);
        let mut tokens = Vec::with_capacity(out.lexemes.len());
        for lx in &out.lexemes {
            let s = lx.text(text);
            match self {
                TokenizerKind::Lexeme => tokens.push(s.to_string()),
                TokenizerKind::CharPair => {
                    let chars: Vec<char> = s.chars().collect();
                    tokens.extend(chars.chunks(2).map(|c| c.iter().collect::<String>()));
                }
            }
        }
        tokens
    }

    fn code(self) -> u8 {
        match self {
            TokenizerKind::Lexeme => 0,
            TokenizerKind::CharPair => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self, FormatError> {
        match c {
            0 => Ok(TokenizerKind::Lexeme),
            1 => Ok(TokenizerKind::CharPair),
            _ => Err(FormatError::Invalid(format!("tokenizer code {c}"))),
        }
    }
}

impl std::str::FromStr for TokenizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexeme" => Ok(TokenizerKind::Lexeme),
            "char-pair" | "charpair" => Ok(TokenizerKind::CharPair),
            other => Err(format!("unknown tokenizer {other:?} (expected lexeme or char-pair)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramConfig {
    pub order: usize,
    /// Interpolation weights, lowest order (unigram) first. Weights of
    /// contexts never seen in training are dropped and the rest renormalized.
    pub weights: Vec<f64>,
    /// Probability floor applied before taking logs.
    pub floor: f64,
    /// Emit `ln(p / floor)` instead of `ln p`. Same softmax, but logits are
    /// non-negative, which is the regime a sign-dependent repetition penalty
    /// expects (LLM logits of plausible tokens are positive).
    pub floor_relative: bool,
    pub tokenizer: TokenizerKind,
    pub seed: u64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self {
            order: 3,
            weights: vec![0.05, 0.25, 0.7],
            floor: 1e-6,
            floor_relative: true,
            tokenizer: TokenizerKind::Lexeme,
            seed: 0,
        }
    }
}

impl NgramConfig {
    /// Default weights for `order`: geometric, doubling per order.
    pub fn with_order(order: usize) -> Self {
        let raw: Vec<f64> = (0..order).map(|k| 2f64.powi(k as i32)).collect();
        let total: f64 = raw.iter().sum();
        Self { order, weights: raw.iter().map(|w| w / total).collect(), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Followers {
    total: u64,
    next: Vec<(TokenId, u32)>,
}

/// Interpolated n-gram model over code tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    config: NgramConfig,
    lexer_name: String,
    vocab: Vocabulary,
    unigram: Vec<u64>,
    unigram_total: u64,
    /// `tables[k - 1]` maps a context of length `k` to its successors.
    tables: Vec<HashMap<Vec<TokenId>, Followers>>,
}

const MAGIC: &[u8; 8] = b"GMNGRAM\0";
const VERSION: u32 = 1;

impl NgramLm {
    pub fn train(corpus: &[&str], lexer: &dyn Lexer, config: NgramConfig) -> Result<Self, SourceError> {
        if config.order == 0 || config.weights.len() != config.order {
            return Err(SourceError::Protocol(format!(
                "order {} needs {} interpolation weights, got {}",
                config.order,
                config.order,
                config.weights.len()
            )));
        }
        let docs: Vec<Vec<String>> = corpus.iter().map(|d| config.tokenizer.split(d, lexer)).collect();
        let n_tokens: usize = docs.iter().map(Vec::len).sum();
        if n_tokens < config.order + 1 {
            return Err(SourceError::CorpusTooSmall { tokens: n_tokens, needed: config.order + 1 });
        }
        let distinct: BTreeSet<&str> = docs.iter().flatten().map(String::as_str).filter(|t| *t != UNK).collect();
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(distinct.into_iter().map(str::to_string));
        let mut special = vec![false; tokens.len()];
        special[0] = true;
        let vocab = Vocabulary::with_special(tokens, special).map_err(|e| SourceError::Protocol(e.to_string()))?;

        let mut unigram = vec![0u64; vocab.len()];
        let mut raw: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u32>>> = vec![HashMap::new(); config.order - 1];
        for doc in &docs {
            let ids: Vec<TokenId> = doc.iter().map(|t| vocab.id(t).unwrap_or(0)).collect();
            for &id in &ids {
                unigram[id as usize] += 1;
            }
            for k in 1..config.order {
                for i in k..ids.len() {
                    *raw[k - 1].entry(ids[i - k..i].to_vec()).or_default().entry(ids[i]).or_default() += 1;
                }
            }
        }
        let tables = raw
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|(ctx, next)| {
                        let mut next: Vec<(TokenId, u32)> = next.into_iter().collect();
                        next.sort_unstable();
                        let total = next.iter().map(|&(_, c)| c as u64).sum();
                        (ctx, Followers { total, next })
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            unigram_total: unigram.iter().sum(),
            unigram,
            tables,
            vocab,
            lexer_name: lexer.name().to_string(),
            config,
        })
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn lexer_name(&self) -> &str {
        &self.lexer_name
    }

    pub fn tokenizer(&self) -> TokenizerKind {
        self.config.tokenizer
    }

    /// Token ids of `text`; strings outside the vocabulary map to `<unk>`.
    pub fn encode(&self, text: &str, lexer: &dyn Lexer) -> Vec<TokenId> {
        self.config
            .tokenizer
            .split(text, lexer)
            .iter()
            .map(|t| self.vocab.id(t).unwrap_or(0))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        self.vocab.detokenize(ids)
    }

    /// Interpolated next-token distribution after `history`.
    pub fn probabilities(&self, history: &[TokenId]) -> Vec<f64> {
        let total = self.unigram_total.max(1) as f64;
        let w0 = self.config.weights[0];
        let mut p: Vec<f64> = self.unigram.iter().map(|&c| w0 * c as f64 / total).collect();
        let mut wsum = w0;
        for k in 1..self.config.order {
            if history.len() < k {
                break;
            }
            if let Some(f) = self.tables[k - 1].get(&history[history.len() - k..]) {
                let wk = self.config.weights[k];
                let denom = f.total as f64;
                for &(id, c) in &f.next {
                    p[id as usize] += wk * c as f64 / denom;
                }
                wsum += wk;
            }
        }
        for x in &mut p {
            *x /= wsum;
        }
        p
    }

    pub fn logits<S: Scalar>(&self, history: &[TokenId]) -> LogitVector<S> {
        let floor = self.config.floor;
        let shift = if self.config.floor_relative { -floor.ln() } else { 0.0 };
        LogitVector::new(
            self.probabilities(history)
                .into_iter()
                .map(|p| S::from_f64_lossy(p.max(floor).ln() + shift))
                .collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.magic(MAGIC, VERSION);
        w.u32(self.config.order as u32);
        w.u8(self.config.tokenizer.code());
        w.u8(self.config.floor_relative as u8);
        w.u64(self.config.seed);
        w.f64(self.config.floor);
        for &x in &self.config.weights {
            w.f64(x);
        }
        w.str(&self.lexer_name);
        w.u32(self.vocab.len() as u32);
        for (id, t) in self.vocab.tokens().iter().enumerate() {
            w.u8(self.vocab.is_special(id as TokenId) as u8);
            w.str(t);
        }
        for &c in &self.unigram {
            w.u64(c);
        }
        for table in &self.tables {
            let mut keys: Vec<&Vec<TokenId>> = table.keys().collect();
            keys.sort_unstable();
            w.u32(keys.len() as u32);
            for ctx in keys {
                for &id in ctx {
                    w.u32(id);
                }
                let f = &table[ctx];
                w.u32(f.next.len() as u32);
                for &(id, c) in &f.next {
                    w.u32(id);
                    w.u32(c);
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        let version = r.magic(MAGIC, "GMNGRAM")?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let order = r.u32()? as usize;
        if !(1..=16).contains(&order) {
            return Err(FormatError::Invalid(format!("order {order}")));
        }
        let tokenizer = TokenizerKind::from_code(r.u8()?)?;
        let floor_relative = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(FormatError::Invalid(format!("floor_relative byte {b}"))),
        };
        let seed = r.u64()?;
        let floor = r.f64()?;
        let weights = (0..order).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let lexer_name = r.str()?;
        let n = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(n);
        let mut special = Vec::with_capacity(n);
        for _ in 0..n {
            special.push(r.u8()? != 0);
            tokens.push(r.str()?);
        }
        let vocab = Vocabulary::with_special(tokens, special).map_err(|e| FormatError::Invalid(e.to_string()))?;
        let unigram = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        let mut tables = Vec::with_capacity(order - 1);
        for k in 1..order {
            let count = r.u32()? as usize;
            let mut table = HashMap::with_capacity(count);
            for _ in 0..count {
                let ctx = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
                let m = r.u32()? as usize;
                let mut next = Vec::with_capacity(m);
                for _ in 0..m {
                    let id = r.u32()?;
                    if id as usize >= n {
                        return Err(FormatError::Invalid(format!("token id {id} out of range")));
                    }
                    next.push((id, r.u32()?));
                }
                let total = next.iter().map(|&(_, c)| c as u64).sum();
                table.insert(ctx, Followers { total, next });
            }
            tables.push(table);
        }
        r.finish()?;
        Ok(Self {
            config: NgramConfig { order, weights, floor, floor_relative, tokenizer, seed },
            lexer_name,
            unigram_total: unigram.iter().sum(),
            unigram,
            vocab,
            tables,
        })
    }
}

fn history(ctx: &GenerationContext) -> Vec<TokenId> {
    ctx.all_ids().collect()
}

impl<S: Scalar> LogitSource<S> for NgramLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&mut self, ctx: &GenerationContext) -> Result<LogitVector<S>, SourceError> {
        Ok(self.logits(&history(ctx)))
    }
}

/// Borrowing adapter so one trained model can serve many sessions.
#[derive(Debug, Clone, Copy)]
pub struct NgramSource<'a>(pub &'a NgramLm);

impl<S: Scalar> LogitSource<S> for NgramSource<'_> {
    fn vocabulary(&self) -> &Vocabulary {
        &self.0.vocab
    }

    fn next_logits(&mut self, ctx: &GenerationContext) -> Result<LogitVector<S>, SourceError> {
        Ok(self.0.logits(&history(ctx)))
    }
}
