//! Little-endian framing helpers for the model file formats.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid field: {0}")]
    Invalid(String),
}

#[derive(Debug, Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn magic(&mut self, magic: &[u8; 8], version: u32) {
        self.buf.extend_from_slice(magic);
        self.u32(version);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn scalars<S: Scalar>(&mut self, v: &[S]) {
        self.u32(v.len() as u32);
        for &x in v {
            x.write_le(&mut self.buf);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    /// Check the magic and return the version.
    pub fn magic(&mut self, magic: &'static [u8; 8], name: &'static str) -> Result<u32, FormatError> {
        if self.take(8)? != magic {
            return Err(FormatError::BadMagic { expected: name });
        }
        self.u32()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Invalid("non-UTF-8 string".into()))
    }

    pub fn scalars<S: Scalar>(&mut self, expected: usize) -> Result<Vec<S>, FormatError> {
        let n = self.u32()? as usize;
        if n != expected {
            return Err(FormatError::Invalid(format!("expected {expected} values, found {n}")));
        }
        let bytes = self.take(n * S::BYTES)?;
        Ok(bytes.chunks_exact(S::BYTES).map(S::read_le).collect())
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::Invalid(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}
