//! 256-bit stack word. Only the operations the symbolic stack needs are provided.

use alloc::string::String;
use core::fmt;
use core::ops::BitAnd;

/// Big-endian 256-bit word.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(pub [u8; 32]);

impl Word {
    pub const ZERO: Word = Word([0; 32]);

    /// Right-aligned big-endian load; longer inputs keep their low 32 bytes.
    pub fn from_be_slice(bytes: &[u8]) -> Word {
        let mut w = [0u8; 32];
        let src = if bytes.len() > 32 { &bytes[bytes.len() - 32..] } else { bytes };
        w[32 - src.len()..].copy_from_slice(src);
        Word(w)
    }

    pub fn from_u64(v: u64) -> Word {
        Word::from_be_slice(&v.to_be_bytes())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    pub fn low_u64(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.0[24..]);
        u64::from_be_bytes(b)
    }

    /// Low 4 bytes, e.g. a function selector.
    pub fn low_u32(&self) -> u32 {
        let mut b = [0u8; 4];
        b.copy_from_slice(&self.0[28..]);
        u32::from_be_bytes(b)
    }

    /// The value as `usize` when it fits in 64 bits.
    pub fn to_usize(&self) -> Option<usize> {
        if self.0[..24].iter().any(|&b| b != 0) {
            return None;
        }
        usize::try_from(self.low_u64()).ok()
    }

    pub fn to_hex(&self) -> String {
        use core::fmt::Write;
        let mut s = String::from("0x");
        let first = self.0.iter().position(|&b| b != 0).unwrap_or(31);
        for b in &self.0[first..] {
            let _ = write!(s, "{:02x}", b);
        }
        s
    }
}

impl BitAnd for Word {
    type Output = Word;
    fn bitand(self, rhs: Word) -> Word {
        let mut out = [0u8; 32];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(rhs.0.iter())) {
            *o = a & b;
        }
        Word(out)
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl serde::Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for Word {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Word, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        let bytes = crate::hexser::parse_hex(&s).map_err(serde::de::Error::custom)?;
        if bytes.len() > 32 {
            return Err(serde::de::Error::custom("word longer than 32 bytes"));
        }
        Ok(Word::from_be_slice(&bytes))
    }
}
