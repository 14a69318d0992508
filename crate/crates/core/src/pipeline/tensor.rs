//! Self-describing little-endian binary tensor files.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "PVXT"
//! 4       1         version (1)
//! 5       1         dtype: 1 = float32, 2 = uint16, 3 = uint8, 4 = uint32
//! 6       1         rank (1..=8)
//! 7       1         reserved (0)
//! 8       4·rank    dims, u32 little-endian, outermost first
//! 8+4·rank  …       payload, row-major, little-endian
//! ```
//!
//! The payload length must equal `product(dims) × dtype size` exactly.

use std::path::Path;

use crate::error::{Error, Result};

use super::write_atomic;

pub const MAGIC: &[u8; 4] = b"PVXT";
pub const VERSION: u8 = 1;
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    U16 = 2,
    U8 = 3,
    U32 = 4,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::U16 => 2,
            DType::U8 => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<DType> {
        match tag {
            1 => Some(DType::F32),
            2 => Some(DType::U16),
            3 => Some(DType::U8),
            4 => Some(DType::U32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U16(_) => DType::U16,
            TensorData::U8(_) => DType::U8,
            TensorData::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Tensor> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Dimension(format!(
                "tensor rank {} unsupported",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize)
            || dims.iter().product::<usize>() != data.len()
        {
            return Err(Error::Dimension(format!(
                "tensor dims {:?} do not match {} elements",
                dims,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn f32(dims: Vec<usize>, values: impl IntoIterator<Item = f64>) -> Result<Tensor> {
        Self::new(
            dims,
            TensorData::F32(values.into_iter().map(|v| v as f32).collect()),
        )
    }

    pub fn u8(dims: Vec<usize>, values: Vec<u8>) -> Result<Tensor> {
        Self::new(dims, TensorData::U8(values))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            8 + 4 * self.dims.len() + self.data.len() * self.data.dtype().size(),
        );
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.data.dtype() as u8);
        out.push(self.dims.len() as u8);
        out.push(0);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::U32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parses `bytes`; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
        if bytes.len() < 8 || &bytes[0..4] != MAGIC {
            return Err(Error::format(path, "not a tensor file (bad magic)"));
        }
        if bytes[4] != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported tensor version {}", bytes[4]),
            ));
        }
        let dtype = DType::from_tag(bytes[5])
            .ok_or_else(|| Error::format(path, format!("unknown dtype tag {}", bytes[5])))?;
        let rank = bytes[6] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format(path, format!("unsupported rank {rank}")));
        }
        let header = 8 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::format(path, "truncated header"));
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(path, "dims overflow"))?;
        let payload = &bytes[header..];
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::format(path, "dims overflow"))?;
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                path: path.to_path_buf(),
                expected,
                actual: payload.len(),
            });
        }
        let data = match dtype {
            DType::F32 => {
                let v: Vec<f32> = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        path: path.to_path_buf(),
                    });
                }
                TensorData::F32(v)
            }
            DType::U16 => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
            DType::U32 => TensorData::U32(
                payload
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        };
        Ok(Tensor { dims, data })
    }

    /// Values as `f64` (float32 tensors only).
    pub fn to_f64(&self, path: &Path) -> Result<Vec<f64>> {
        match &self.data {
            TensorData::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            _ => Err(Error::format(path, "expected a float32 tensor")),
        }
    }

    pub fn as_u8(&self, path: &Path) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            _ => Err(Error::format(path, "expected a uint8 tensor")),
        }
    }

    pub fn as_u32(&self, path: &Path) -> Result<&[u32]> {
        match &self.data {
            TensorData::U32(v) => Ok(v),
            _ => Err(Error::format(path, "expected a uint32 tensor")),
        }
    }

    /// Fails unless the tensor has exactly `rank` dimensions.
    pub fn expect_rank(&self, rank: usize, path: &Path) -> Result<()> {
        if self.dims.len() != rank {
            return Err(Error::Dimension(format!(
                "{}: expected rank {rank}, got dims {:?}",
                path.display(),
                self.dims
            )));
        }
        Ok(())
    }
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes, path)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &tensor.encode())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::new(vec![2, 1], TensorData::U16(vec![1, 0x0203])).unwrap();
        assert_eq!(
            t.encode(),
            vec![b'P', b'V', b'X', b'T', 1, 2, 2, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 3, 2]
        );
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = Tensor::f32(vec![3, 4], (0..12).map(|i| i as f64)).unwrap();
        let mut bytes = t.encode();
        bytes.truncate(bytes.len() - 3);
        let err = Tensor::decode(&bytes, Path::new("x.pvxt")).unwrap_err();
        assert!(matches!(
            err,
            Error::PayloadLength {
                expected: 48,
                actual: 45,
                ..
            }
        ));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let t = Tensor::new(vec![2], TensorData::F32(vec![1.0, f32::NAN])).unwrap();
        assert!(matches!(
            Tensor::decode(&t.encode(), Path::new("n.pvxt")),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn bad_headers() {
        let p = Path::new("h.pvxt");
        assert!(Tensor::decode(b"NOPE1234", p).is_err());
        assert!(Tensor::decode(&[b'P', b'V', b'X', b'T', 1, 9, 1, 0, 1, 0, 0, 0, 0], p).is_err());
        assert!(Tensor::decode(&[b'P', b'V', b'X', b'T', 1, 3, 0, 0], p).is_err());
        assert!(Tensor::new(vec![2, 2], TensorData::U8(vec![0; 3])).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_is_lossless(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let vals: Vec<f32> = (0..n).map(|i| (seed as f32) * 1e-3 - i as f32 * 0.37).collect();
            let t = Tensor::new(dims.clone(), TensorData::F32(vals)).unwrap();
            prop_assert_eq!(Tensor::decode(&t.encode(), Path::new("p")).unwrap(), t);
            let w: Vec<u32> = (0..n as u32).map(|i| i.wrapping_mul(seed)).collect();
            let t = Tensor::new(dims, TensorData::U32(w)).unwrap();
            prop_assert_eq!(Tensor::decode(&t.encode(), Path::new("p")).unwrap(), t);
        }
    }
}
