//! Named parameter storage with gradients and optimizer moments, plus the
//! `GVLP` checkpoint format.
//!
//! Layout (little-endian): magic `GVLP`, u32 version, u32 entry count, then
//! per entry u16 name length, UTF-8 name, u32 rows, u32 cols and four f64
//! arrays (value, grad, first moment, second moment). A trailer of u64 step
//! counter and a CRC-32 of every preceding byte closes the file.

use std::collections::BTreeMap;
use std::path::Path;

use super::graph::{Gradients, Graph, Var};
use super::{NumericsError, Tensor2D};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GVLP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub m: Tensor2D,
    pub v: Tensor2D,
}

impl ParamEntry {
    fn new(value: Tensor2D) -> Self {
        let (r, c) = value.shape();
        Self { value, grad: Tensor2D::zeros(r, c), m: Tensor2D::zeros(r, c), v: Tensor2D::zeros(r, c) }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts (or replaces) a parameter with zeroed gradient and moments.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2D) {
        self.entries.insert(name.into(), ParamEntry::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) {
        self.step += 1;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry, NumericsError> {
        self.entries.get(name).ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2D, NumericsError> {
        Ok(&self.entry(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2D, NumericsError> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2D, NumericsError> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    /// Binds a stored parameter into `g`, as a trainable leaf or a constant.
    pub fn bind(&self, g: &mut Graph, name: &str, trainable: bool) -> Result<Var, NumericsError> {
        let value = self.value(name)?.clone();
        Ok(if trainable { g.param(name, value) } else { g.constant(value) })
    }

    /// Adds `scale ×` the gradient of every named leaf in `g` into the store.
    pub fn accumulate_grads(
        &mut self,
        g: &Graph,
        grads: &Gradients,
        scale: f64,
    ) -> Result<(), NumericsError> {
        for (var, name) in g.params() {
            let Some(gr) = grads.get(*var) else { continue };
            let entry = self
                .entries
                .get_mut(name)
                .ok_or_else(|| NumericsError::UnknownParam(name.clone()))?;
            if entry.grad.shape() != gr.shape() {
                return Err(NumericsError::Shape(format!("gradient shape for `{name}`")));
            }
            for (a, b) in entry.grad.data_mut().iter_mut().zip(gr.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self, filter: impl Fn(&str) -> bool) -> f64 {
        self.entries
            .iter()
            .filter(|(k, _)| filter(k))
            .map(|(_, e)| e.grad.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(e.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(e.value.cols() as u32).to_le_bytes());
            for t in [&e.value, &e.grad, &e.m, &e.v] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumericsError> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(NumericsError::Checkpoint("bad magic".into()));
        }
        if bytes.len() < 12 + 8 + 4 {
            return Err(NumericsError::Checkpoint("truncated header".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NumericsError::Checkpoint(format!("unsupported version {version}")));
        }
        if stored != computed {
            return Err(NumericsError::ChecksumMismatch { stored, computed });
        }
        let count = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| NumericsError::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(32).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| NumericsError::Checkpoint(format!("truncated entry `{name}`")))?;
            let mut read = || -> Result<Tensor2D, NumericsError> {
                let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                Tensor2D::from_vec(rows, cols, data)
            };
            let value = read()?;
            let grad = read()?;
            let m = read()?;
            let v = read()?;
            if entries.insert(name.clone(), ParamEntry { value, grad, m, v }).is_some() {
                return Err(NumericsError::Checkpoint(format!("duplicate entry `{name}`")));
            }
        }
        let step = r.u64()?;
        if r.remaining() != 0 {
            return Err(NumericsError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { entries, step })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NumericsError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NumericsError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        if self.remaining() < n {
            return Err(NumericsError::Checkpoint("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, NumericsError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NumericsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NumericsError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("b.weight", Tensor2D::from_rows(&[vec![1.0, -2.5], vec![0.125, 3.0]]).unwrap());
        s.insert("a.bias", Tensor2D::row_vector(&[f64::MIN_POSITIVE, -0.0, 7.0]));
        s.entries.get_mut("a.bias").unwrap().m.set(0, 1, 0.5);
        s.step = 42;
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample_store();
        let bytes = s.to_bytes();
        let back = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step(), 42);
        assert_eq!(back.value("a.bias").unwrap().get(0, 1).to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn header_layout() {
        let bytes = sample_store().to_bytes();
        assert_eq!(&bytes[..4], b"GVLP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // first entry in name order
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 6);
        assert_eq!(&bytes[14..20], b"a.bias");
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample_store().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ParamStore::from_bytes(&bad), Err(NumericsError::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[30] ^= 0x10;
        assert!(matches!(ParamStore::from_bytes(&bad), Err(NumericsError::ChecksumMismatch { .. })));
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }
}
