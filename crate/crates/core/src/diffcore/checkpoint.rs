//! Parameter checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"PEMT" | u32 version | u32 tensor count
//! per tensor, sorted by name:
//!   u32 name length | name bytes (UTF-8) | u32 rows | u32 cols | rows*cols f64
//! ```

use crate::error::{Error, Result};

use super::Tensor;

const MAGIC: &[u8; 4] = b"PEMT";
const VERSION: u32 = 1;

pub(crate) fn encode<'a>(tensors: impl Iterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut items: Vec<_> = tensors.collect();
    items.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Schema(format!(
                "checkpoint truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Schema("not a parameter checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Schema(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Schema("checkpoint tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Schema(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::ParamSet;
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::row_vector(&[1.0, -2.5])).unwrap();
        p.insert("a", Tensor::new(2, 1, vec![0.125, f64::MIN_POSITIVE]).unwrap()).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"PEMT");
        // Sorted by name: "a" comes first.
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(bytes[16], b'a');
        let back = ParamSet::from_bytes(&bytes).unwrap();
        assert_eq!(back.get("a"), p.get("a"));
        assert_eq!(back.get("b"), p.get("b"));
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_and_garbage_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(3, 3)).unwrap();
        let bytes = p.to_bytes();
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ParamSet::from_bytes(b"nope").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ParamSet::from_bytes(&extra).is_err());
    }
}
