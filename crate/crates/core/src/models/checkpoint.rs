//! `PLS1` tensor container.
//!
//! Layout (little endian): magic `PLS1`, `u16` version, `u32` tensor count,
//! then per tensor `u16` name length, UTF-8 name, `u8` dtype (0 single,
//! 1 double), `u8` rank, `u32` per dim, raw values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use crate::autodiff::NamedTensors;
use crate::error::{Error, Result};
use crate::numerics::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"PLS1";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode<T: Scalar>(tensors: &NamedTensors<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + tensors.numel() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Format("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.code());
        out.push(t.rank() as u8);
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| Error::Format("dim exceeds u32".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Dtype of the first tensor (the container is dtype-uniform); `None` if empty.
pub fn peek_dtype(bytes: &[u8]) -> Result<Option<DType>> {
    let mut r = header(bytes)?;
    if r.1 == 0 {
        return Ok(None);
    }
    let len = r.0.u16()? as usize;
    r.0.take(len)?;
    let code = r.0.u8()?;
    DType::from_code(code)
        .map(Some)
        .ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))
}

fn header(bytes: &[u8]) -> Result<(Reader<'_>, u32)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    Ok((r, count))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<NamedTensors<T>> {
    let (mut r, count) = header(bytes)?;
    let mut out = NamedTensors::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("name is not UTF-8".into()))?
            .to_string();
        let code = r.u8()?;
        if DType::from_code(code) != Some(T::DTYPE) {
            return Err(Error::Format(format!(
                "`{name}` has dtype code {code}, expected {:?}",
                T::DTYPE
            )));
        }
        let rank = r.u8()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n * T::BYTES)?;
        let data = raw.chunks(T::BYTES).map(T::read_le).collect();
        out.insert(
            name,
            Tensor::new(&dims, data).map_err(|e| Error::Format(e.to_string()))?,
        )?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn save<T: Scalar>(path: &Path, tensors: &NamedTensors<T>) -> Result<()> {
    std::fs::write(path, encode(tensors)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<NamedTensors<T>> {
    decode(&std::fs::read(path)?)
}

/// JSON sidecar stored next to a checkpoint as `<file>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub dtype: DType,
    pub model: Option<ModelSpec>,
    /// Free-form description of what produced the file (task, construction, dataset range).
    #[serde(default)]
    pub source: serde_json::Value,
    pub config_hash: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub iter: Option<u64>,
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_manifest(checkpoint: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m)?;
    std::fs::write(manifest_path(checkpoint), text + "\n")?;
    Ok(())
}

pub fn load_manifest(checkpoint: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(manifest_path(checkpoint))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors<f32> {
        let mut s = NamedTensors::new();
        s.insert("a", Tensor::from_rows(&[vec![1.0, -2.5], vec![3.0, 0.125]]))
            .unwrap();
        s.insert("layer.b", Tensor::from_vec(&[f64::from(f32::MIN_POSITIVE), -0.0]))
            .unwrap();
        s
    }

    #[test]
    fn byte_layout_of_header() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"PLS1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 1);
        assert_eq!(bytes[12], b'a');
        assert_eq!(bytes[13], 0);
        assert_eq!(bytes[14], 2);
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let bytes = encode(&sample()).unwrap();
        let back: NamedTensors<f32> = decode(&bytes).unwrap();
        assert_eq!(encode(&back).unwrap(), bytes);
        assert_eq!(peek_dtype(&bytes).unwrap(), Some(DType::Single));
        assert!(decode::<f64>(&bytes).is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut bytes = encode(&sample()).unwrap();
        bytes.pop();
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Format(_))));
    }
}
