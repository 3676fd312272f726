//! `MVFW` binary weight files.
//!
//! ```text
//! magic    b"MVFW"
//! version  u32 LE
//! count    u32 LE
//! entry*   name_len u32 | name (UTF-8) | dtype u8 (0 = f32, 1 = f64) | rank u8 | dims u32 x rank | payload
//! ```
//!
//! Payloads are little-endian regardless of the host.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::tensor::{DType, Float};

pub const MAGIC: &[u8; 4] = b"MVFW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightEntry {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    /// Raw little-endian payload.
    pub payload: Vec<u8>,
}

impl WeightEntry {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn values<T: Float>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Weights(format!("'{}' is stored as {:?}, expected {:?}", self.name, self.dtype, T::DTYPE)));
        }
        Ok(self.payload.chunks_exact(self.dtype.width()).map(T::read_le).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeightFile {
    pub entries: Vec<WeightEntry>,
}

fn weights_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Weights(msg.into()))
}

fn read_exact(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| Error::Weights(format!("truncated file while reading {what}: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4, what)?.try_into().expect("4 bytes")))
}

impl WeightFile {
    /// Snapshot every parameter and buffer of `p`, in visiting order.
    pub fn from_params<T: Float>(p: &impl Parameterized<T>) -> Self {
        let mut entries = Vec::new();
        p.visit("", &mut |r| {
            let mut payload = Vec::with_capacity(r.data.len() * T::DTYPE.width());
            r.data.iter().for_each(|&v| v.write_le(&mut payload));
            entries.push(WeightEntry { name: r.name, dtype: T::DTYPE, dims: r.shape, payload });
        });
        WeightFile { entries }
    }

    /// Overwrite every parameter and buffer of `p`, matching entries by name. The sets of names
    /// and every shape must agree exactly; nothing is modified otherwise.
    pub fn apply_to<T: Float>(&self, p: &mut impl Parameterized<T>) -> Result<()> {
        let mut expected = Vec::new();
        p.visit("", &mut |r| expected.push((r.name, r.shape)));
        let mut values = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let e = self.entries.iter().find(|e| &e.name == name).ok_or_else(|| Error::Weights(format!("missing entry '{name}'")))?;
            if &e.dims != shape {
                return weights_err(format!("'{name}' has shape {:?} in the file but {:?} in the network", e.dims, shape));
            }
            values.push(e.values::<T>()?);
        }
        if let Some(extra) = self.entries.iter().find(|e| !expected.iter().any(|(n, _)| n == &e.name)) {
            return weights_err(format!("unexpected entry '{}'", extra.name));
        }
        let mut it = values.into_iter();
        p.visit_mut("", &mut |m| m.data.copy_from_slice(&it.next().expect("one value set per entry")));
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.entries.len()).map_err(|_| Error::Weights("too many entries".into()))?.to_le_bytes());
        for e in &self.entries {
            if e.payload.len() != e.numel() * e.dtype.width() {
                return weights_err(format!("'{}': payload length does not match its dims", e.name));
            }
            let rank = u8::try_from(e.dims.len()).map_err(|_| Error::Weights(format!("'{}': rank too large", e.name)))?;
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.code());
            out.push(rank);
            for &d in &e.dims {
                let d = u32::try_from(d).map_err(|_| Error::Weights(format!("'{}': dimension too large", e.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&e.payload);
        }
        w.write_all(&out)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        if read_exact(r, 4, "magic")? != MAGIC {
            return weights_err("not an MVFW file (bad magic)");
        }
        let version = read_u32(r, "version")?;
        if version != VERSION {
            return weights_err(format!("unsupported format version {version}"));
        }
        let count = read_u32(r, "entry count")?;
        let mut entries = Vec::new();
        for i in 0..count {
            let len = read_u32(r, "name length")? as usize;
            let name = String::from_utf8(read_exact(r, len, "name")?).map_err(|_| Error::Weights(format!("entry {i}: name is not UTF-8")))?;
            let head = read_exact(r, 2, "dtype and rank")?;
            let dtype = DType::from_code(head[0]).ok_or_else(|| Error::Weights(format!("'{name}': unknown dtype code {}", head[0])))?;
            let mut dims = Vec::with_capacity(head[1] as usize);
            for _ in 0..head[1] {
                dims.push(read_u32(r, "dims")? as usize);
            }
            let bytes = dims
                .iter()
                .try_fold(dtype.width(), |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Weights(format!("'{name}': payload size overflows")))?;
            let payload = read_exact(r, bytes, "payload")?;
            entries.push(WeightEntry { name, dtype, dims, payload });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return weights_err("trailing bytes after the last entry");
        }
        Ok(WeightFile { entries })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Weights(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::LinearWeights;

    #[test]
    fn round_trip_and_rejects() {
        let mut w = LinearWeights::<f32>::zeros(3, 2);
        w.weight.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.5 - 1.0);
        let file = WeightFile::from_params(&w);
        let bytes = file.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"MVFW");
        assert_eq!(WeightFile::from_bytes(&bytes).unwrap(), file);

        let mut back = LinearWeights::<f32>::zeros(3, 2);
        file.apply_to(&mut back).unwrap();
        assert_eq!(back, w);
        assert!(file.apply_to(&mut LinearWeights::<f32>::zeros(2, 2)).is_err());
        assert!(file.apply_to(&mut LinearWeights::<f64>::zeros(3, 2)).is_err());
        assert!(WeightFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(WeightFile::from_bytes(b"NOPE").is_err());
    }
}
