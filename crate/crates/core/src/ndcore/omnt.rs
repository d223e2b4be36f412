//! `OMNT` binary tensor files.
//!
//! Layout: magic `OMNT`, version `0x01`, dtype byte (0 = f32, 1 = f64, 2 = u8),
//! ndim byte, `ndim` little-endian u32 extents, then raw little-endian data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"OMNT";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl Dtype {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::U8),
            other => Err(Error::Format(format!("unknown OMNT dtype byte {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

/// A tensor of any storable dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum OmntArray {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl OmntArray {
    pub fn dtype(&self) -> Dtype {
        match self {
            OmntArray::F32(_) => Dtype::F32,
            OmntArray::F64(_) => Dtype::F64,
            OmntArray::U8(_) => Dtype::U8,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            OmntArray::F32(t) => t.dims(),
            OmntArray::F64(t) => t.dims(),
            OmntArray::U8(t) => t.dims(),
        }
    }

    /// Converts to a floating tensor; exact for every stored dtype when `T = f64`.
    pub fn to_real<T: Real>(&self) -> Tensor<T> {
        match self {
            OmntArray::F32(t) => t.cast(),
            OmntArray::F64(t) => t.cast(),
            OmntArray::U8(t) => t.map(|v| T::lit(v as f64)),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let dims = self.dims();
        if dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!(
                "{} axes exceed the OMNT limit",
                dims.len()
            )));
        }
        let n: usize = dims.iter().product();
        let mut out = Vec::with_capacity(7 + 4 * dims.len() + n * self.dtype().width());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype() as u8);
        out.push(dims.len() as u8);
        for &d in dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("extent {d} does not fit in u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match self {
            OmntArray::F32(t) => t
                .data()
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            OmntArray::F64(t) => t
                .data()
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            OmntArray::U8(t) => out.extend_from_slice(t.data()),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Format("truncated OMNT header".into());
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing OMNT magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!(
                "unsupported OMNT version {}",
                bytes[4]
            )));
        }
        let dtype = Dtype::from_byte(bytes[5])?;
        let ndim = bytes[6] as usize;
        let header = 7 + 4 * ndim;
        let ext = bytes.get(7..header).ok_or_else(short)?;
        let dims: Vec<usize> = ext
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
            .collect();
        let n: usize = dims.iter().product();
        let body = &bytes[header..];
        if body.len() != n * dtype.width() {
            return Err(Error::Format(format!(
                "OMNT body holds {} bytes, dims {dims:?} of {dtype:?} need {}",
                body.len(),
                n * dtype.width()
            )));
        }
        Ok(match dtype {
            Dtype::F32 => OmntArray::F32(Tensor::from_vec(
                &dims,
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            )?),
            Dtype::F64 => OmntArray::F64(Tensor::from_vec(
                &dims,
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            )?),
            Dtype::U8 => OmntArray::U8(Tensor::from_vec(&dims, body.to_vec())?),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

impl From<Tensor<f32>> for OmntArray {
    fn from(t: Tensor<f32>) -> Self {
        OmntArray::F32(t)
    }
}

impl From<Tensor<f64>> for OmntArray {
    fn from(t: Tensor<f64>) -> Self {
        OmntArray::F64(t)
    }
}

impl From<Tensor<u8>> for OmntArray {
    fn from(t: Tensor<u8>) -> Self {
        OmntArray::U8(t)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_vec(&[2, 1], vec![1u8, 2]).unwrap();
        let bytes = OmntArray::from(t).encode().unwrap();
        assert_eq!(
            bytes,
            vec![b'O', b'M', b'N', b'T', 1, 2, 2, 2, 0, 0, 0, 1, 0, 0, 0, 1, 2]
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(OmntArray::decode(b"NOPE\x01\x00\x00").is_err());
        assert!(OmntArray::decode(b"OMNT\x02\x00\x00").is_err());
        assert!(OmntArray::decode(b"OMNT\x01\x07\x00").is_err());
        // one f64 declared, four bytes supplied
        assert!(OmntArray::decode(b"OMNT\x01\x01\x01\x01\x00\x00\x00abcd").is_err());
    }

    proptest! {
        #[test]
        fn f64_roundtrip_is_bitwise(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n as u64)
                .map(|i| f64::from_bits(crate::ndcore::rng::mix64(seed, i)))
                .collect();
            let a = OmntArray::from(Tensor::from_vec(&dims, data).unwrap());
            let b = OmntArray::decode(&a.encode().unwrap()).unwrap();
            // compare bits so NaN payloads count too
            let (OmntArray::F64(x), OmntArray::F64(y)) = (&a, &b) else { panic!() };
            prop_assert_eq!(x.dims(), y.dims());
            prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }

        #[test]
        fn f32_and_u8_roundtrip(v in prop::collection::vec(any::<f32>(), 1..20), b in prop::collection::vec(any::<u8>(), 1..20)) {
            let a = OmntArray::from(Tensor::from_vec(&[v.len()], v.clone()).unwrap());
            let OmntArray::F32(back) = OmntArray::decode(&a.encode().unwrap()).unwrap() else { panic!() };
            prop_assert!(back.data().iter().zip(&v).all(|(p, q)| p.to_bits() == q.to_bits()));
            let a = OmntArray::from(Tensor::from_vec(&[b.len()], b).unwrap());
            prop_assert_eq!(OmntArray::decode(&a.encode().unwrap()).unwrap(), a);
        }
    }
}
