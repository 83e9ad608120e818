//! Little-endian primitives shared by the graph and checkpoint containers.

use crossflow_core::linalg::Matrix;

use crate::error::FormatError;

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.buf.reserve(8 * v.len());
        for x in v {
            self.bytes(&x.to_le_bytes());
        }
    }

    /// Length-prefixed (u32) UTF-8.
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// Length-prefixed (u64) blob.
    pub fn blob(&mut self, b: &[u8]) {
        self.usize(b.len());
        self.bytes(b);
    }

    pub fn matrix(&mut self, m: &Matrix) {
        self.usize(m.rows);
        self.usize(m.cols);
        self.f64s(&m.data);
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() < n {
            return Err(FormatError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    pub fn magic(&mut self, magic: &[u8; 8], version: u32) -> Result<(), FormatError> {
        if self.take(8).map_err(|_| FormatError::Magic)? != magic {
            return Err(FormatError::Magic);
        }
        match self.u32()? {
            v if v == version => Ok(()),
            v => Err(FormatError::Version(v)),
        }
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize, FormatError> {
        usize::try_from(self.u64()?).map_err(|_| FormatError::Invalid("length overflows usize".into()))
    }

    /// A count whose payload is at least `unit` bytes per item; refuses counts the
    /// remaining input cannot hold.
    pub fn count(&mut self, unit: usize) -> Result<usize, FormatError> {
        let n = self.usize()?;
        if n.checked_mul(unit).is_none_or(|b| b > self.buf.len()) {
            return Err(FormatError::Truncated);
        }
        Ok(n)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or(FormatError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FormatError::Invalid("string is not UTF-8".into()))
    }

    pub fn blob(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.count(1)?;
        self.take(n)
    }

    pub fn matrix(&mut self) -> Result<Matrix, FormatError> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows.checked_mul(cols).ok_or(FormatError::Truncated)?;
        Ok(Matrix::from_vec(rows, cols, self.f64s(n)?))
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.buf.len() {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}
