//! Little-endian encoding helpers shared by the checkpoint container and
//! the memory snapshot.

use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Result};

pub const DIGEST_LEN: usize = 32;

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
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
        self.bytes(s.as_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn blob(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.bytes(b);
    }

    /// Frames the body as `magic | version | body length | body | sha256`,
    /// the digest covering everything before it.
    pub fn finish(self, magic: [u8; 4], version: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.buf.len() + DIGEST_LEN);
        out.extend_from_slice(&magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.buf.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.buf);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }
}

/// Validates a frame written by [`Writer::finish`] and returns a reader
/// over its body. Checks run in order: magic, version, length, digest.
pub fn unframe(buf: &[u8], magic: [u8; 4], version: u32) -> Result<Reader<'_>> {
    let head = &buf[..buf.len().min(4)];
    if head != &magic[..head.len()] || buf.len() < 4 {
        if head.len() < 4 && head == &magic[..head.len()] {
            return Err(CheckpointError::Truncated { offset: buf.len(), needed: 16 - buf.len() }.into());
        }
        return Err(CheckpointError::BadMagic { expected: magic, found: head.to_vec() }.into());
    }
    if buf.len() < 16 {
        return Err(CheckpointError::Truncated { offset: buf.len(), needed: 16 - buf.len() }.into());
    }
    let found_version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if found_version != version {
        return Err(CheckpointError::UnsupportedVersion(found_version).into());
    }
    let body_len = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes"));
    let total = (body_len as u128) + 16 + DIGEST_LEN as u128;
    if (buf.len() as u128) < total {
        return Err(CheckpointError::Truncated { offset: buf.len(), needed: (total - buf.len() as u128) as usize }.into());
    }
    if (buf.len() as u128) > total {
        return Err(CheckpointError::Integrity(format!("{} trailing bytes", buf.len() as u128 - total)).into());
    }
    let split = buf.len() - DIGEST_LEN;
    if Sha256::digest(&buf[..split]).as_slice() != &buf[split..] {
        return Err(CheckpointError::Integrity("sha-256 digest does not match contents".into()).into());
    }
    Ok(Reader::new(&buf[16..split]))
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(CheckpointError::Truncated { offset: self.pos, needed: n - remaining }.into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Integrity("string is not valid UTF-8".into()).into())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| CheckpointError::Integrity("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()?;
        self.take(usize::try_from(n).map_err(|_| CheckpointError::Integrity("blob length overflow".into()))?)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(CheckpointError::Integrity(format!("{} trailing bytes", self.buf.len() - self.pos)).into())
        }
    }
}
