//! Little-endian cursor and builder shared by the binary formats.

use crate::error::FormatError;

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::new(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let m = self.take(4)?;
        if m != expected {
            return Err(FormatError::new(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<(), FormatError> {
        let v = self.u32()?;
        if v != expected {
            return Err(FormatError::new(format!("unsupported version {v}, expected {expected}")));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize, FormatError> {
        Ok(self.u32()? as usize)
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(self.f32()? as f64)
    }

    /// Checks that `count` items of `width` bytes fit before reading them.
    pub fn expect(&self, count: usize, width: usize) -> Result<(), FormatError> {
        let need = count
            .checked_mul(width)
            .ok_or_else(|| FormatError::new("payload size overflows"))?;
        if need > self.remaining() {
            return Err(FormatError::new(format!(
                "header declares {need} payload bytes but only {} remain",
                self.remaining()
            )));
        }
        Ok(())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        self.expect(n, 4)?;
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::new(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Writer {
        Writer::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Writes a count; counts above `u32::MAX` are a caller bug.
    pub fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("count fits in u32"));
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.f32(v as f32);
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}
