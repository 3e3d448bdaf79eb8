//! Lexical analysis into token-type sequences and the type -> vocabulary map.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::types::{TokenId, Vocabulary};

/// Lexical token categories shared across languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum LexTokenType {
    Token = 0,
    Comment = 1,
    Error = 2,
    Escape = 3,
    Generic = 4,
    Keyword = 5,
    Literal = 6,
    Name = 7,
    Operator = 8,
    Other = 9,
    Punctuation = 10,
    Text = 11,
}

impl LexTokenType {
    pub const COUNT: usize = 12;

    pub const ALL: [LexTokenType; Self::COUNT] = [
        LexTokenType::Token,
        LexTokenType::Comment,
        LexTokenType::Error,
        LexTokenType::Escape,
        LexTokenType::Generic,
        LexTokenType::Keyword,
        LexTokenType::Literal,
        LexTokenType::Name,
        LexTokenType::Operator,
        LexTokenType::Other,
        LexTokenType::Punctuation,
        LexTokenType::Text,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LexTokenType::Token => "Token",
            LexTokenType::Comment => "Comment",
            LexTokenType::Error => "Error",
            LexTokenType::Escape => "Escape",
            LexTokenType::Generic => "Generic",
            LexTokenType::Keyword => "Keyword",
            LexTokenType::Literal => "Literal",
            LexTokenType::Name => "Name",
            LexTokenType::Operator => "Operator",
            LexTokenType::Other => "Other",
            LexTokenType::Punctuation => "Punctuation",
            LexTokenType::Text => "Text",
        }
    }
}

impl Serialize for LexTokenType {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        s.serialize_str(self.name())
    }
}

impl fmt::Display for LexTokenType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LexTokenType {
    type Err = TypeMapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TypeMapError::Parse(format!("unknown token type {s:?}")))
    }
}

/// One lexeme: a typed byte span of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lexeme {
    pub ty: LexTokenType,
    pub start: usize,
    pub end: usize,
}

impl Lexeme {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }
}

/// Full lexer output: spans covering the input, plus the in-progress state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LexOutput {
    pub lexemes: Vec<Lexeme>,
    /// Type a continuation of the final lexeme would carry, when the input
    /// ends part-way through a lexeme that could still grow.
    pub partial: Option<LexTokenType>,
}

/// Type sequence `tau_0 .. tau_{l-1}` of a source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LexTypeSequence {
    pub types: Vec<LexTokenType>,
    pub trailing_partial: bool,
    pub partial_type: Option<LexTokenType>,
}

impl LexTypeSequence {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

impl From<&LexOutput> for LexTypeSequence {
    fn from(out: &LexOutput) -> Self {
        Self {
            types: out.lexemes.iter().map(|l| l.ty).collect(),
            trailing_partial: out.partial.is_some(),
            partial_type: out.partial,
        }
    }
}

/// A lexer for one language. `lex` must be total and cover its input.
pub trait Lexer: Send + Sync {
    fn name(&self) -> &str;

    fn lex(&self, text: &str) -> LexOutput;

    fn is_keyword(&self, word: &str) -> bool;

    fn tokenize(&self, text: &str) -> LexTypeSequence {
        LexTypeSequence::from(&self.lex(text))
    }

    /// Type of a vocabulary token seen in isolation.
    ///
    /// Whitespace-only strings are `Text`; a string forming exactly one
    /// lexeme takes that lexeme's type; identifier fragments (letters, digits
    /// and underscores, not all digits, not a keyword) are `Name`; any other
    /// multi-lexeme string takes the type of its first lexeme; what is left is
    /// `Other`.
    fn classify_standalone(&self, token: &str) -> LexTokenType {
        if token.is_empty() {
            return LexTokenType::Other;
        }
        if token.chars().all(char::is_whitespace) {
            return LexTokenType::Text;
        }
        let out = self.lex(token);
        if let [only] = out.lexemes.as_slice() {
            if only.ty != LexTokenType::Error {
                return only.ty;
            }
        }
        let fragment = token.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
            && !token.bytes().all(|b| b.is_ascii_digit());
        if fragment && !self.is_keyword(token) {
            return LexTokenType::Name;
        }
        match out.lexemes.first() {
            Some(first) if first.ty != LexTokenType::Error => first.ty,
            _ => LexTokenType::Other,
        }
    }
}

/// Bundled lexer for a small Python-like language.
///
/// | lexeme | type |
/// |---|---|
/// | runs of space, tab, CR, LF | Text |
/// | `#` up to (excluding) newline | Comment |
/// | `[A-Za-z_][A-Za-z0-9_]*` in the keyword set | Keyword |
/// | other identifiers | Name |
/// | `[0-9]+`, `"..."` with `\` escapes | Literal |
/// | `"` unterminated before newline/EOF | Error |
/// | `== != <= >= += -= = < > + - / %` | Operator |
/// | `( ) [ ] { } , : ; . *` | Punctuation |
/// | `\` (line continuation) | Escape |
/// | any other character | Error |
#[derive(Debug, Clone, Copy, Default)]
pub struct MiniLangLexer;

pub const MINILANG_KEYWORDS: [&str; 7] = ["def", "if", "else", "for", "in", "while", "return"];

/// Lexers selectable by name (`--lexer`).
pub const LEXER_NAMES: [&str; 1] = ["minilang"];

pub fn lexer_by_name(name: &str) -> Option<Box<dyn Lexer>> {
    match name {
        "minilang" => Some(Box::new(MiniLangLexer)),
        _ => None,
    }
}

pub fn minilang_lexer() -> MiniLangLexer {
    MiniLangLexer
}

const TWO_CHAR_OPS: [&[u8; 2]; 6] = [b"==", b"!=", b"<=", b">=", b"+=", b"-="];

impl Lexer for MiniLangLexer {
    fn name(&self) -> &str {
        "minilang"
    }

    fn is_keyword(&self, word: &str) -> bool {
        MINILANG_KEYWORDS.contains(&word)
    }

    fn lex(&self, text: &str) -> LexOutput {
        use LexTokenType as T;
        let b = text.as_bytes();
        let n = b.len();
        let mut lexemes = Vec::new();
        let mut partial = None;
        let mut i = 0;
        while i < n {
            let c = b[i];
            let (ty, end, part) = match c {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    let j = scan(b, i, |c| matches!(c, b' ' | b'\t' | b'\r' | b'\n'));
                    (T::Text, j, None)
                }
                b'#' => {
                    let j = scan(b, i, |c| c != b'\n');
                    (T::Comment, j, (j == n).then_some(T::Comment))
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let j = scan(b, i, |c| c.is_ascii_alphanumeric() || c == b'_');
                    let ty = if self.is_keyword(&text[i..j]) { T::Keyword } else { T::Name };
                    (ty, j, (j == n).then_some(T::Name))
                }
                c if c.is_ascii_digit() => {
                    let j = scan(b, i, |c| c.is_ascii_digit());
                    (T::Literal, j, (j == n).then_some(T::Literal))
                }
                b'"' => {
                    let mut j = i + 1;
                    let mut closed = false;
                    while j < n {
                        match b[j] {
                            b'"' => {
                                j += 1;
                                closed = true;
                                break;
                            }
                            b'\n' => break,
                            b'\\' if j + 1 < n && b[j + 1] != b'\n' => j += utf8_len(b[j + 1]) + 1,
                            other => j += utf8_len(other),
                        }
                    }
                    let j = j.min(n);
                    if closed {
                        (T::Literal, j, None)
                    } else {
                        (T::Error, j, (j == n).then_some(T::Literal))
                    }
                }
                b'\\' => (T::Escape, i + 1, None),
                b'=' | b'!' | b'<' | b'>' | b'+' | b'-' | b'/' | b'%' => {
                    if i + 1 < n && TWO_CHAR_OPS.iter().any(|op| op[0] == c && op[1] == b[i + 1]) {
                        (T::Operator, i + 2, None)
                    } else {
                        let ty = if c == b'!' { T::Error } else { T::Operator };
                        let extendable = i + 1 == n && TWO_CHAR_OPS.iter().any(|op| op[0] == c);
                        (ty, i + 1, extendable.then_some(T::Operator))
                    }
                }
                b'(' | b')' | b'[' | b']' | b'{' | b'}' | b',' | b':' | b';' | b'.' | b'*' => {
                    (T::Punctuation, i + 1, None)
                }
                other => (T::Error, (i + utf8_len(other)).min(n), None),
            };
            lexemes.push(Lexeme { ty, start: i, end });
            if end == n {
                partial = part;
            }
            i = end;
        }
        LexOutput { lexemes, partial }
    }
}

fn scan(b: &[u8], start: usize, keep: impl Fn(u8) -> bool) -> usize {
    let mut j = start + 1;
    while j < b.len() && keep(b[j]) {
        j += 1;
    }
    j
}

fn utf8_len(first: u8) -> usize {
    match first {
        0x00..=0x7f => 1,
        0xc0..=0xdf => 2,
        0xe0..=0xef => 3,
        _ => 4,
    }
}

#[derive(Debug, Error)]
pub enum TypeMapError {
    #[error("type map parse error: {0}")]
    Parse(String),
    #[error("type map is not a partition: {0}")]
    NotPartition(String),
    #[error("type map built for {found} tokens, vocabulary has {expected}")]
    SizeMismatch { expected: usize, found: usize },
}

/// Partition of the vocabulary by lexical type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeVocabMap {
    type_of: Vec<LexTokenType>,
    members: Vec<Vec<TokenId>>,
}

const TYPE_MAP_HEADER: &str = "gramark-type-map v1";

impl TypeVocabMap {
    pub fn from_assignment(type_of: Vec<LexTokenType>) -> Self {
        let mut members = vec![Vec::new(); LexTokenType::COUNT];
        for (id, ty) in type_of.iter().enumerate() {
            members[ty.index()].push(id as TokenId);
        }
        Self { type_of, members }
    }

    pub fn vocab_size(&self) -> usize {
        self.type_of.len()
    }

    pub fn type_of(&self, id: TokenId) -> LexTokenType {
        self.type_of[id as usize]
    }

    pub fn members(&self, ty: LexTokenType) -> &[TokenId] {
        &self.members[ty.index()]
    }

    pub fn contains(&self, ty: LexTokenType, id: TokenId) -> bool {
        self.type_of.get(id as usize) == Some(&ty)
    }

    /// Text form: a header, `vocab_size N`, `lexer NAME`, then one
    /// `Type: id id ...` line per type.
    pub fn to_text(&self, lexer_name: &str) -> String {
        let mut out = format!("{TYPE_MAP_HEADER}\nvocab_size {}\nlexer {lexer_name}\n", self.vocab_size());
        for ty in LexTokenType::ALL {
            out.push_str(ty.name());
            out.push(':');
            for id in self.members(ty) {
                out.push(' ');
                out.push_str(&id.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TypeMapError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(TYPE_MAP_HEADER) {
            return Err(TypeMapError::Parse(format!("missing header {TYPE_MAP_HEADER:?}")));
        }
        let size: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("vocab_size "))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| TypeMapError::Parse("missing vocab_size line".into()))?;
        lines
            .next()
            .filter(|l| l.starts_with("lexer "))
            .ok_or_else(|| TypeMapError::Parse("missing lexer line".into()))?;
        let mut type_of: Vec<Option<LexTokenType>> = vec![None; size];
        for line in lines {
            let (name, ids) = line
                .split_once(':')
                .ok_or_else(|| TypeMapError::Parse(format!("bad line {line:?}")))?;
            let ty: LexTokenType = name.trim().parse()?;
            for tok in ids.split_whitespace() {
                let id: usize = tok.parse().map_err(|_| TypeMapError::Parse(format!("bad id {tok:?}")))?;
                let slot = type_of
                    .get_mut(id)
                    .ok_or_else(|| TypeMapError::NotPartition(format!("id {id} >= vocab_size {size}")))?;
                if slot.replace(ty).is_some() {
                    return Err(TypeMapError::NotPartition(format!("id {id} assigned twice")));
                }
            }
        }
        let type_of = type_of
            .into_iter()
            .enumerate()
            .map(|(id, t)| t.ok_or_else(|| TypeMapError::NotPartition(format!("id {id} unassigned"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_assignment(type_of))
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), TypeMapError> {
        if self.vocab_size() != vocab.len() {
            return Err(TypeMapError::SizeMismatch { expected: vocab.len(), found: self.vocab_size() });
        }
        Ok(())
    }
}

/// Assign every vocabulary token to exactly one lexical type.
pub fn build_type_map(vocab: &Vocabulary, lexer: &dyn Lexer) -> TypeVocabMap {
    let type_of = (0..vocab.len() as TokenId)
        .map(|id| {
            if vocab.is_special(id) {
                LexTokenType::Other
            } else {
                lexer.classify_standalone(vocab.token(id).unwrap_or_default())
            }
        })
        .collect();
    TypeVocabMap::from_assignment(type_of)
}
