//! Little-endian framing shared by the checkpoint and truth files: fixed
//! scalars plus named sections of `f64` arrays.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Section {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn section(&mut self, s: &Section) {
        self.str(&s.name);
        self.buf.push(DTYPE_F64);
        self.u32(s.shape.len() as u32);
        for &d in &s.shape {
            self.u64(d as u64);
        }
        for v in &s.data {
            self.bytes(&v.to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &Path) -> Self {
        Self {
            buf,
            pos: 0,
            path: path.to_owned(),
        }
    }

    pub fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.corrupt(format!("truncated at byte {} (wanted {n} more)", self.pos))),
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.bytes(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.corrupt("string is not UTF-8"))
    }

    pub fn section(&mut self) -> Result<Section> {
        let name = self.str()?;
        let dtype = self.u8()?;
        if dtype != DTYPE_F64 {
            return Err(self.corrupt(format!("section `{name}`: unknown dtype tag {dtype}")));
        }
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(self.corrupt(format!("section `{name}`: implausible rank {ndim}")));
        }
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| self.corrupt(format!("section `{name}`: shape overflows")))?;
        let raw = self.bytes(count.checked_mul(8).ok_or_else(|| self.corrupt("section too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Section { name, shape, data })
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let s = Section::new("w", vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25]);
        let mut w = Writer::default();
        w.u32(7);
        w.str("hi");
        w.section(&s);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes, Path::new("x"));
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.str().unwrap(), "hi");
        let back = r.section().unwrap();
        assert_eq!(back.shape, s.shape);
        assert!(back.data.iter().zip(&s.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        r.expect_end().unwrap();

        for cut in [1, 5, bytes.len() - 1] {
            let mut r = Reader::new(&bytes[..cut], Path::new("x"));
            let res = r.u32().and_then(|_| r.str()).and_then(|_| r.section());
            assert!(matches!(res, Err(Error::Corrupt { .. })), "cut {cut}");
        }
    }
}
