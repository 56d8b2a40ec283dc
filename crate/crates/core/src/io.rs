//! Binary containers.
//!
//! Tensor file: `b"TNSR"`, version byte, dim count byte, each dim as u64
//! little-endian, then the row-major payload as f32 little-endian.
//!
//! Checkpoint: `b"EGCK"`, version byte, u32 length + UTF-8 JSON metadata,
//! u32 tensor count, then per tensor a u16 length + UTF-8 name, dim count
//! byte, u64 dims and the f32 payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EGCK";
pub const VERSION: u8 = 1;

/// Round every value to the nearest f32, as storing would.
pub fn quantize(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

fn put_tensor_body(out: &mut Vec<u8>, t: &Tensor) -> Result<()> {
    let ndim = u8::try_from(t.shape().len()).map_err(|_| Error::Format("too many dimensions".into()))?;
    out.push(ndim);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        let v = self.u8()?;
        if v != VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn tensor_body(&mut self) -> Result<Tensor> {
        let ndim = self.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(usize::try_from(self.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("element count overflow".into()))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("payload overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Tensor::from_vec(&shape, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 8 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(VERSION);
    put_tensor_body(&mut out, t)?;
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(TENSOR_MAGIC)?;
    let t = r.tensor_body()?;
    r.finish()?;
    Ok(t)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_bytes(path, &encode_tensor(t)?)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&read_bytes(path)?)
}

/// Named tensors plus a JSON metadata document.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode_container(c: &Container) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(VERSION);
    let meta = u32::try_from(c.meta.len()).map_err(|_| Error::Format("metadata too large".into()))?;
    out.extend_from_slice(&meta.to_le_bytes());
    out.extend_from_slice(c.meta.as_bytes());
    let count = u32::try_from(c.tensors.len()).map_err(|_| Error::Format("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in &c.tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        put_tensor_body(&mut out, t)?;
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Container> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(CHECKPOINT_MAGIC)?;
    let n = r.u32()? as usize;
    let meta = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        tensors.push((name, r.tensor_body()?));
    }
    r.finish()?;
    Ok(Container { meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_exact_for_f32_values() {
        let mut t = Tensor::from_vec(&[2, 3], vec![0.1, -2.5, 3.0, 1e-7, 0.0, 7.25]).unwrap();
        quantize(t.data_mut());
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(&bytes[..4], TENSOR_MAGIC);
        assert_eq!(bytes.len(), 4 + 1 + 1 + 16 + 24);
        assert_eq!(decode_tensor(&bytes).unwrap(), t);
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let bytes = encode_tensor(&Tensor::zeros(&[4])).unwrap();
        assert!(decode_tensor(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_tensor(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_tensor(&long).is_err());
    }

    #[test]
    fn container_round_trip() {
        let c = Container {
            meta: "{\"a\":1}".into(),
            tensors: vec![
                ("x.weight".into(), Tensor::full(&[2, 2], 0.5)),
                ("y".into(), Tensor::zeros(&[0])),
            ],
        };
        assert_eq!(decode_container(&encode_container(&c).unwrap()).unwrap(), c);
    }
}
