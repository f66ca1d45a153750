//! Little-endian binary format helpers shared by the checkpoint and packed
//! model files. Both formats are: magic, u16 version, length-prefixed body,
//! trailing CRC32 of everything after the magic.

use crate::error::{BinetError, Result};

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32_slice(&mut self, s: &[f32]) {
        self.u64(s.len() as u64);
        self.buf.reserve(s.len() * 4);
        for &v in s {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn u64_slice(&mut self, s: &[u64]) {
        self.u64(s.len() as u64);
        self.buf.reserve(s.len() * 8);
        for &v in s {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn usize_slice(&mut self, s: &[usize]) {
        self.u64(s.len() as u64);
        for &v in s {
            self.u64(v as u64);
        }
    }

    pub fn string(&mut self, s: &str) {
        let bytes = s.as_bytes();
        self.u64(bytes.len() as u64);
        self.buf.extend_from_slice(bytes);
    }

    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

impl Default for Writer {
    fn default() -> Self {
        Writer::new()
    }
}

/// Frame a body as magic, u16 version, u64 body length, body, CRC32.
/// The checksum covers version, length and body, so truncation (detected by
/// the declared length) and corruption (detected by the checksum) report
/// distinct errors.
pub fn frame(magic: &[u8; 4], version: u16, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(magic.len() + 2 + 8 + body.len() + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&out[4..]);
    out.extend_from_slice(&hasher.finalize().to_le_bytes());
    out
}

/// Validate a framed buffer and return its body.
pub fn unframe<'a>(magic: &[u8; 4], version: u16, bytes: &'a [u8]) -> Result<&'a [u8]> {
    if bytes.len() < 4 {
        return Err(BinetError::FormatTruncated("missing magic".into()));
    }
    if &bytes[..4] != magic {
        return Err(BinetError::FormatMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    if bytes.len() < 14 {
        return Err(BinetError::FormatTruncated("missing header".into()));
    }
    let found_version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if found_version != version {
        return Err(BinetError::FormatVersion { expected: version, found: found_version });
    }
    let body_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let expected_total = 14 + body_len + 4;
    if bytes.len() < expected_total {
        return Err(BinetError::FormatTruncated(format!(
            "declared body of {body_len} bytes, file holds {}",
            bytes.len().saturating_sub(18)
        )));
    }
    let payload = &bytes[4..14 + body_len];
    let stored =
        u32::from_le_bytes(bytes[14 + body_len..expected_total].try_into().unwrap());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(payload);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(BinetError::FormatChecksum { expected: stored, found: computed });
    }
    Ok(&bytes[14..14 + body_len])
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(BinetError::FormatTruncated(format!(
                "reading {what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len_prefix(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        if n > self.buf.len() as u64 {
            return Err(BinetError::FormatTruncated(format!(
                "{what}: declared length {n} exceeds file size"
            )));
        }
        Ok(n as usize)
    }

    pub fn f32_slice(&mut self, what: &str) -> Result<Vec<f32>> {
        let n = self.len_prefix(what)?;
        let raw = self.take(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }

    pub fn u64_slice(&mut self, what: &str) -> Result<Vec<u64>> {
        let n = self.len_prefix(what)?;
        let raw = self.take(n * 8, what)?;
        Ok(raw.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())).collect())
    }

    pub fn usize_slice(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.len_prefix(what)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.u64(what)? as usize);
        }
        Ok(out)
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let n = self.len_prefix(what)?;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| BinetError::FormatTruncated(format!("{what}: invalid utf-8")))
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.take(n, what)
    }

    pub fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}
