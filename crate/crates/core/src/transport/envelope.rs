//! Length-prefixed framing: `u32` big-endian length, `u16` message type,
//! `key:value` header lines ended by a blank line, then the payload. The
//! length covers everything after itself.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    Enroll,
    Auth,
    Identity,
    Health,
    WorkerScore,
}

impl MessageType {
    pub const ALL: [MessageType; 5] = [Self::Enroll, Self::Auth, Self::Identity, Self::Health, Self::WorkerScore];

    pub fn code(self) -> u16 {
        match self {
            Self::Enroll => 0x01,
            Self::Auth => 0x02,
            Self::Identity => 0x03,
            Self::Health => 0x04,
            Self::WorkerScore => 0x11,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.code() == code)
            .ok_or_else(|| Error::Protocol(format!("unknown message type {code:#06x}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub kind: MessageType,
    pub headers: Vec<(String, String)>,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn new(kind: MessageType) -> Self {
        Self { kind, headers: Vec::new(), payload: Vec::new() }
    }

    pub fn header(mut self, key: &str, value: impl ToString) -> Self {
        self.headers.push((key.to_owned(), value.to_string()));
        self
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Protocol(format!("missing header {key:?}")))
    }

    pub fn require_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse().map_err(|_| Error::Protocol(format!("header {key:?} has bad value {v:?}")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut head = String::new();
        for (k, v) in &self.headers {
            if k.is_empty() || k.contains([':', '\n', '\r']) || v.contains(['\n', '\r']) {
                return Err(Error::Protocol(format!("header {k:?} cannot be framed")));
            }
            head.push_str(k);
            head.push(':');
            head.push_str(v);
            head.push('\n');
        }
        head.push('\n');
        let len = 2 + head.len() + self.payload.len();
        if len > MAX_FRAME {
            return Err(Error::Protocol(format!("frame of {len} bytes exceeds limit")));
        }
        let mut out = Vec::with_capacity(4 + len);
        out.extend_from_slice(&(len as u32).to_be_bytes());
        out.extend_from_slice(&self.kind.code().to_be_bytes());
        out.extend_from_slice(head.as_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Parses one complete frame; trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Protocol("truncated length prefix".into()))?;
        let len = u32::from_be_bytes(len_bytes) as usize;
        if bytes.len() - 4 != len {
            return Err(Error::Protocol(format!("frame declares {len} bytes, has {}", bytes.len() - 4)));
        }
        Self::decode_body(&bytes[4..])
    }

    fn decode_body(body: &[u8]) -> Result<Self> {
        if body.len() < 2 {
            return Err(Error::Protocol("frame too short for a message type".into()));
        }
        let kind = MessageType::from_code(u16::from_be_bytes([body[0], body[1]]))?;
        let rest = &body[2..];
        let mut headers = Vec::new();
        let mut pos = 0;
        loop {
            let nl = rest[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Protocol("unterminated header block".into()))?;
            let line = std::str::from_utf8(&rest[pos..pos + nl]).map_err(|_| Error::Protocol("header is not UTF-8".into()))?;
            pos += nl + 1;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Protocol(format!("header line {line:?} lacks ':'")))?;
            headers.push((k.to_owned(), v.to_owned()));
        }
        Ok(Self { kind, headers, payload: rest[pos..].to_vec() })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode()?)?;
        w.flush()?;
        Ok(())
    }

    /// Reads one frame. `Ok(None)` on a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_FRAME {
            return Err(Error::Protocol(format!("frame of {len} bytes exceeds limit")));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        Self::decode_body(&body).map(Some)
    }
}
