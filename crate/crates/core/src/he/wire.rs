//! Little-endian container helpers shared by key and ciphertext files.
//!
//! Every container starts with an 8-byte magic, a u16 format version and the
//! 16-byte parameter digest.

use crate::params::ParamsDigest;

use super::{HeError, HeResult};

pub const FORMAT_VERSION: u16 = 1;

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], digest: ParamsDigest, capacity: usize) -> Self {
        let mut buf = Vec::with_capacity(capacity + 26);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&digest.0);
        Self { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64s(&mut self, vs: &[u64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validates magic and version and returns the reader plus the digest found.
    pub fn open(bytes: &'a [u8], magic: &[u8; 8]) -> HeResult<(Self, ParamsDigest)> {
        if bytes.len() < 26 {
            return Err(HeError::Format("container shorter than its header".into()));
        }
        if &bytes[..8] != magic {
            return Err(HeError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..8]),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != FORMAT_VERSION {
            return Err(HeError::Format(format!("unsupported format version {version}")));
        }
        let mut digest = [0u8; 16];
        digest.copy_from_slice(&bytes[10..26]);
        Ok((Self { bytes, pos: 26 }, ParamsDigest(digest)))
    }

    fn take(&mut self, n: usize) -> HeResult<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(HeError::Format("truncated container".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> HeResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> HeResult<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> HeResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> HeResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads `n` words, each required to be below `bound`.
    pub fn u64s_below(&mut self, n: usize, bound: u64) -> HeResult<Vec<u64>> {
        let raw = self.take(n * 8)?;
        let mut out = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(8) {
            let v = u64::from_le_bytes(chunk.try_into().unwrap());
            if v >= bound {
                return Err(HeError::Format("residue exceeds its modulus".into()));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn finish(self) -> HeResult<()> {
        if self.pos != self.bytes.len() {
            return Err(HeError::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn expect_digest(found: ParamsDigest, expected: ParamsDigest) -> HeResult<()> {
    if found != expected {
        return Err(HeError::ParamsMismatch { expected, found });
    }
    Ok(())
}
