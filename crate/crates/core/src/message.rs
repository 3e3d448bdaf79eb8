//! String <-> integer payload codec.
//!
//! Text is encoded by concatenating the decimal ASCII code of every character
//! and reading the digit string as an integer: `"GPT"` is `71 80 84`, i.e.
//! `718084`. Printable codes are 32..=126, so a code starting with `1` always
//! has three digits and any other code has two; decoding is therefore
//! unambiguous.

use thiserror::Error;

use crate::types::{TypeError, WatermarkMessage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("message text must not be empty")]
    Empty,
    #[error("character {0:?} is not printable ASCII")]
    NotPrintable(char),
    #[error("encoded message {digits} overflows {bits} bits")]
    OverflowsWidth { digits: String, bits: u8 },
    #[error(transparent)]
    Width(#[from] TypeError),
}

pub fn encode_message(text: &str, bits: u8) -> Result<WatermarkMessage, CodecError> {
    if text.is_empty() {
        return Err(CodecError::Empty);
    }
    let mut digits = String::with_capacity(text.len() * 3);
    for c in text.chars() {
        if !(' '..='~').contains(&c) {
            return Err(CodecError::NotPrintable(c));
        }
        digits.push_str(&(c as u32).to_string());
    }
    let value: u64 = match digits.parse() {
        Ok(v) => v,
        Err(_) => return Err(CodecError::OverflowsWidth { digits, bits }),
    };
    WatermarkMessage::new(value, bits).map_err(|e| match e {
        TypeError::OverflowsWidth { .. } => CodecError::OverflowsWidth { digits, bits },
        other => CodecError::Width(other),
    })
}

/// Decoded form of a payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Text(String),
    Raw(u32),
}

impl Decoded {
    pub fn render(&self) -> String {
        match self {
            Decoded::Text(t) => t.clone(),
            Decoded::Raw(v) => v.to_string(),
        }
    }
}

pub fn decode_message(message: WatermarkMessage) -> Decoded {
    decode_value(message.value())
}

pub fn decode_value(value: u32) -> Decoded {
    let digits = value.to_string();
    let b = digits.as_bytes();
    let mut out = String::new();
    let mut i = 0;
    while i < b.len() {
        let two = (i + 2 <= b.len()).then(|| parse(&b[i..i + 2]));
        if let Some(code @ 32..=99) = two {
            out.push(code as u8 as char);
            i += 2;
            continue;
        }
        let three = (i + 3 <= b.len()).then(|| parse(&b[i..i + 3]));
        if let Some(code @ 100..=126) = three {
            out.push(code as u8 as char);
            i += 3;
            continue;
        }
        return Decoded::Raw(value);
    }
    Decoded::Text(out)
}

fn parse(d: &[u8]) -> u32 {
    d.iter().fold(0, |acc, &c| acc * 10 + (c - b'0') as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gpt_round_trip() {
        let m = encode_message("GPT", 20).unwrap();
        assert_eq!(m.value(), 718084);
        assert_eq!(decode_message(m), Decoded::Text("GPT".into()));
    }

    #[test]
    fn single_char() {
        assert_eq!(encode_message("A", 20).unwrap().value(), 65);
        assert_eq!(decode_value(65), Decoded::Text("A".into()));
    }

    #[test]
    fn overflow_reported() {
        assert!(matches!(encode_message("GPT", 16), Err(CodecError::OverflowsWidth { .. })));
        // 20 digits do not even fit u64
        assert!(matches!(encode_message("~~~~~~~", 30), Err(CodecError::OverflowsWidth { .. })));
    }

    #[test]
    fn rejects_bad_text() {
        assert_eq!(encode_message("", 20), Err(CodecError::Empty));
        assert_eq!(encode_message("\n", 20), Err(CodecError::NotPrintable('\n')));
    }

    #[test]
    fn unsplittable_falls_back_to_raw() {
        // 20 and 202 are both outside the printable range
        assert_eq!(decode_value(2024), Decoded::Raw(2024));
        assert_eq!(decode_value(2024).render(), "2024");
        assert_eq!(decode_value(0), Decoded::Raw(0));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in "[ -~]{1,3}") {
            let m = encode_message(&s, 30).unwrap();
            prop_assert_eq!(decode_message(m), Decoded::Text(s));
        }
    }
}
