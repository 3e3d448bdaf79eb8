//! Message recovery by exhaustive search over the message space.
//!
//! Every candidate message `m` gets the count of adjacent token pairs that
//! are green under `m`; the message with the highest count wins, ties going
//! to the lowest id. The token part of the hash is precomputed once per
//! pair, and the remaining two mixing rounds run over blocks of consecutive
//! messages in a loop the compiler vectorizes. On x86-64 machines with
//! AVX-512 a separately compiled copy of that loop is picked at run time.

use crate::hashing::{finish, green_threshold, key_seed, sentinel_for, token_stage};
use crate::types::{check_bits, check_green_fraction, TokenId, TypeError, WatermarkKey, WatermarkMessage};

const BLOCK: usize = 1024;

/// Whether the first token is scored against the key's sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtractMode {
    /// The sequence starts at the first generated position.
    #[default]
    FromStart,
    /// The start is unknown (e.g. after cropping); pairs begin at the
    /// second token.
    Cropped,
}

impl std::str::FromStr for ExtractMode {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "from-start" | "from_start" => Ok(ExtractMode::FromStart),
            "cropped" => Ok(ExtractMode::Cropped),
            other => Err(TypeError::InvalidParameter(format!("unknown extract mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractParams {
    pub key: WatermarkKey,
    pub bits: u8,
    pub green_fraction: f64,
    pub mode: ExtractMode,
}

impl ExtractParams {
    pub fn new(key: WatermarkKey, bits: u8) -> Self {
        Self { key, bits, green_fraction: 0.5, mode: ExtractMode::FromStart }
    }

    pub fn with_mode(mut self, mode: ExtractMode) -> Self {
        self.mode = mode;
        self
    }

    fn validate(&self) -> Result<(), TypeError> {
        check_bits(self.bits)?;
        check_green_fraction(self.green_fraction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct ExtractionResult {
    pub best_message: WatermarkMessage,
    pub best_score: u32,
    /// Highest score among all other messages.
    pub runner_up_score: u32,
    pub margin: u32,
    /// Number of scored adjacent pairs.
    pub pairs: usize,
    /// Another message reached the best score.
    pub ambiguous: bool,
}

impl ExtractionResult {
    /// Exact match with `embedded`, requiring at least `min_margin`.
    pub fn recovers(&self, embedded: WatermarkMessage, min_margin: u32) -> bool {
        self.best_message.value() == embedded.value() && self.margin >= min_margin
    }
}

/// Hash inputs of each scored pair, split so the message can vary.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PairTable {
    stage: Vec<u64>,
    prev_key: Vec<u64>,
}

impl PairTable {
    fn new(ids: &[TokenId], key: &WatermarkKey, mode: ExtractMode) -> Self {
        let seed = key_seed(key);
        let mut stage = Vec::with_capacity(ids.len());
        let mut prev_key = Vec::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            let prev = match (i, mode) {
                (0, ExtractMode::Cropped) => continue,
                (0, ExtractMode::FromStart) => sentinel_for(key),
                _ => ids[i - 1] as u64,
            };
            stage.push(token_stage(seed, id as u64));
            prev_key.push(prev ^ key.hi());
        }
        Self { stage, prev_key }
    }

    fn len(&self) -> usize {
        self.stage.len()
    }

    fn score(&self, message: u64, threshold: u64) -> u32 {
        self.stage
            .iter()
            .zip(&self.prev_key)
            .map(|(&a, &b)| (finish(a, message, b) < threshold) as u32)
            .sum()
    }
}

#[inline(always)]
fn count_block_generic(table: &PairTable, m0: u64, threshold: u64, counts: &mut [u32]) {
    // Wrapping arithmetic keeps overflow checks out of the loop so it
    // vectorizes in every build profile.
    counts.fill(0);
    for (&a, &b) in table.stage.iter().zip(&table.prev_key) {
        for (k, c) in counts.iter_mut().enumerate() {
            let m = m0.wrapping_add(k as u64);
            *c = c.wrapping_add((finish(a, m, b) < threshold) as u32);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512dq,avx512vl")]
unsafe fn count_block_avx512(table: &PairTable, m0: u64, threshold: u64, counts: &mut [u32]) {
    count_block_generic(table, m0, threshold, counts)
}

fn count_block(table: &PairTable, m0: u64, threshold: u64, counts: &mut [u32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f")
            && std::arch::is_x86_feature_detected!("avx512dq")
            && std::arch::is_x86_feature_detected!("avx512vl")
        {
            // SAFETY: the required CPU features were detected just above.
            unsafe { count_block_avx512(table, m0, threshold, counts) };
            return;
        }
    }
    count_block_generic(table, m0, threshold, counts)
}

/// Best and runner-up over a contiguous message range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Top2 {
    best: u32,
    best_msg: u64,
    runner_up: u32,
}

impl Top2 {
    /// `self` covers lower message ids than `other`.
    fn merge(self, other: Option<Top2>) -> Top2 {
        match other {
            None => self,
            Some(o) if self.best >= o.best => Top2 { runner_up: self.runner_up.max(o.best), ..self },
            Some(o) => Top2 { runner_up: o.runner_up.max(self.best), ..o },
        }
    }
}

fn scan_range(table: &PairTable, start: u64, end: u64, threshold: u64) -> Option<Top2> {
    let mut counts = vec![0u32; BLOCK];
    let mut acc: Option<Top2> = None;
    let mut m0 = start;
    while m0 < end {
        let n = ((end - m0) as usize).min(BLOCK);
        count_block(table, m0, threshold, &mut counts[..n]);
        let mut local: Option<Top2> = None;
        for (k, &c) in counts[..n].iter().enumerate() {
            local = Some(match local {
                None => Top2 { best: c, best_msg: m0 + k as u64, runner_up: 0 },
                Some(t) if c > t.best => Top2 { best: c, best_msg: m0 + k as u64, runner_up: t.best },
                Some(t) => Top2 { runner_up: t.runner_up.max(c), ..t },
            });
        }
        acc = Some(match acc {
            None => local.expect("non-empty block"),
            Some(a) => a.merge(local),
        });
        m0 += n as u64;
    }
    acc
}

/// Green-pair count of `message` over `ids`.
pub fn score_message(ids: &[TokenId], message: WatermarkMessage, params: &ExtractParams) -> Result<u32, TypeError> {
    params.validate()?;
    let table = PairTable::new(ids, &params.key, params.mode);
    Ok(table.score(message.value() as u64, green_threshold(params.green_fraction)))
}

/// Number of pairs scored for a sequence of `len` tokens.
pub fn scored_pairs(len: usize, mode: ExtractMode) -> usize {
    match mode {
        ExtractMode::FromStart => len,
        ExtractMode::Cropped => len.saturating_sub(1),
    }
}

/// Exhaustive single-threaded search.
pub fn extract(ids: &[TokenId], params: &ExtractParams) -> Result<ExtractionResult, TypeError> {
    extract_parallel(ids, params, 1)
}

/// Exhaustive search split over `workers` threads. The result does not
/// depend on the worker count.
pub fn extract_parallel(ids: &[TokenId], params: &ExtractParams, workers: usize) -> Result<ExtractionResult, TypeError> {
    params.validate()?;
    if workers == 0 {
        return Err(TypeError::InvalidParameter("workers must be >= 1".into()));
    }
    let table = PairTable::new(ids, &params.key, params.mode);
    let threshold = green_threshold(params.green_fraction);
    let space = WatermarkMessage::space(params.bits);
    let blocks = space.div_ceil(BLOCK as u64);
    let workers = (workers as u64).min(blocks).max(1);
    let per = blocks.div_ceil(workers) * BLOCK as u64;
    let ranges: Vec<(u64, u64)> =
        (0..workers).map(|w| (w * per, ((w + 1) * per).min(space))).filter(|(s, e)| s < e).collect();

    let parts: Vec<Option<Top2>> = if ranges.len() == 1 {
        vec![scan_range(&table, ranges[0].0, ranges[0].1, threshold)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .map(|&(s, e)| {
                    let table = &table;
                    scope.spawn(move || scan_range(table, s, e, threshold))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("extraction worker panicked")).collect()
        })
    };
    let top = parts.into_iter().flatten().reduce(|a, b| a.merge(Some(b))).expect("message space is non-empty");
    Ok(ExtractionResult {
        best_message: WatermarkMessage::new(top.best_msg, params.bits)?,
        best_score: top.best,
        runner_up_score: top.runner_up,
        margin: top.best - top.runner_up,
        pairs: table.len(),
        ambiguous: top.best == top.runner_up,
    })
}

/// Whether [`extract`] would return `target`, stopping at the first
/// message that rules it out.
pub fn is_extracted_as(ids: &[TokenId], target: WatermarkMessage, params: &ExtractParams) -> Result<bool, TypeError> {
    params.validate()?;
    if target.bits() != params.bits {
        return Err(TypeError::BadWidth(target.bits()));
    }
    let table = PairTable::new(ids, &params.key, params.mode);
    let threshold = green_threshold(params.green_fraction);
    let t = target.value() as u64;
    let need = table.score(t, threshold);
    let space = WatermarkMessage::space(params.bits);
    let mut counts = vec![0u32; BLOCK];
    // Scan the block holding the target first; it is as likely as any other
    // to hold a rival and its scores are needed anyway.
    let first = t / BLOCK as u64;
    let blocks = space.div_ceil(BLOCK as u64);
    for b in std::iter::once(first).chain((0..blocks).filter(|&b| b != first)) {
        let m0 = b * BLOCK as u64;
        let n = ((space - m0) as usize).min(BLOCK);
        count_block(&table, m0, threshold, &mut counts[..n]);
        for (k, &c) in counts[..n].iter().enumerate() {
            let m = m0 + k as u64;
            if (m < t && c >= need) || (m > t && c > need) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
