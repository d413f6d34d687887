//! Big-endian, length-prefixed byte layouts shared by key files and wire
//! messages. Lengths are `u32` big-endian.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated {field} at offset {offset}: need {need} bytes, have {have}")]
    Truncated {
        field: &'static str,
        offset: usize,
        need: usize,
        have: usize,
    },
    #[error("bad magic at offset 0: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("invalid {field} at offset {offset}: {reason}")]
    Invalid {
        field: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("{count} trailing bytes at offset {offset}")]
    Trailing { offset: usize, count: usize },
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.raw(&v.to_be_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.raw(&v.to_be_bytes())
    }

    /// `u32 len || bytes`.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(bytes.len() as u32).raw(bytes)
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn raw(&mut self, field: &'static str, n: usize) -> Result<&'a [u8], CodecError> {
        let have = self.buf.len() - self.pos;
        if have < n {
            return Err(CodecError::Truncated {
                field,
                offset: self.pos,
                need: n,
                have,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], CodecError> {
        Ok(self.raw(field, N)?.try_into().unwrap())
    }

    pub fn magic(&mut self, expected: &'static str) -> Result<(), CodecError> {
        let have = self.buf.len() - self.pos;
        if have < expected.len() {
            return Err(CodecError::Truncated {
                field: "magic",
                offset: self.pos,
                need: expected.len(),
                have,
            });
        }
        if self.raw("magic", expected.len())? != expected.as_bytes() {
            return Err(CodecError::BadMagic { expected });
        }
        Ok(())
    }

    pub fn version(&mut self, supported: u8) -> Result<(), CodecError> {
        let v = self.u8("version")?;
        if v != supported {
            return Err(CodecError::UnsupportedVersion(v));
        }
        Ok(())
    }

    pub fn u8(&mut self, field: &'static str) -> Result<u8, CodecError> {
        Ok(self.raw(field, 1)?[0])
    }

    pub fn u32(&mut self, field: &'static str) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array(field)?))
    }

    pub fn u64(&mut self, field: &'static str) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array(field)?))
    }

    /// Reads `u32 len || bytes`.
    pub fn bytes(&mut self, field: &'static str) -> Result<&'a [u8], CodecError> {
        let len = self.u32(field)? as usize;
        self.raw(field, len)
    }

    pub fn str(&mut self, field: &'static str) -> Result<&'a str, CodecError> {
        let start = self.pos;
        let b = self.bytes(field)?;
        std::str::from_utf8(b).map_err(|e| CodecError::Invalid {
            field,
            offset: start,
            reason: e.to_string(),
        })
    }

    pub fn invalid(
        &self,
        field: &'static str,
        offset: usize,
        reason: impl Into<String>,
    ) -> CodecError {
        CodecError::Invalid {
            field,
            offset,
            reason: reason.into(),
        }
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CodecError::Trailing {
                offset: self.pos,
                count: self.buf.len() - self.pos,
            })
        }
    }
}
