//! "DAUG v1" binary tensor files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic b"DAUG"
//! 4       4           version, u32 LE (= 1)
//! 8       1           dtype code: 1 = f32, 2 = f64, 3 = u8
//! 9       1           rank
//! 10      8 * rank    extents, u64 LE
//! ...                 row-major payload, little-endian
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"DAUG";
pub const VERSION: u32 = 1;
const HEADER_FIXED: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U8 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

/// Row-major `u8` array. Never carries gradients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ByteTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl ByteTensor {
    pub fn new(shape: &[usize], data: Vec<u8>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK || shape.iter().product::<usize>() != data.len() {
            return Err(contract_err!("u8 tensor shape {:?} does not hold {} values", shape, data.len()));
        }
        Ok(ByteTensor { shape: shape.to_vec(), data })
    }
}

/// A tensor of any DAUG dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(ByteTensor),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::U8(_) => DType::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::U8(t) => &t.shape,
        }
    }

    /// Float view in the requested precision; `u8` values convert to floats.
    pub fn to_float<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
            AnyTensor::U8(b) => Tensor::new(&b.shape, b.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())
                .expect("shape already validated"),
        }
    }
}

pub trait IntoAny {
    fn into_any(self) -> AnyTensor;
}

impl IntoAny for Tensor<f32> {
    fn into_any(self) -> AnyTensor {
        AnyTensor::F32(self)
    }
}

impl IntoAny for Tensor<f64> {
    fn into_any(self) -> AnyTensor {
        AnyTensor::F64(self)
    }
}

pub fn encode(t: &AnyTensor) -> Vec<u8> {
    let shape = t.shape();
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * shape.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.dtype().code());
    out.push(shape.len() as u8);
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    match t {
        AnyTensor::F32(x) => x.data().iter().for_each(|&v| v.write_le(&mut out)),
        AnyTensor::F64(x) => x.data().iter().for_each(|&v| v.write_le(&mut out)),
        AnyTensor::U8(x) => out.extend_from_slice(&x.data),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let need = |offset: usize, n: usize, what: &str| -> Result<()> {
        if bytes.len() < offset + n {
            Err(Error::format(bytes.len(), format!("truncated {what}: need {n} bytes at offset {offset}")))
        } else {
            Ok(())
        }
    };
    need(0, 4, "magic")?;
    if bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected DAUG"));
    }
    need(4, 4, "version")?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    need(8, 2, "dtype/rank")?;
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| Error::format(8, format!("unknown dtype code {}", bytes[8])))?;
    let rank = bytes[9] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(9, format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    need(HEADER_FIXED, 8 * rank, "extents")?;
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for i in 0..rank {
        let at = HEADER_FIXED + 8 * i;
        let e = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let e = usize::try_from(e).map_err(|_| Error::format(at, "extent overflows usize"))?;
        count = count.checked_mul(e).ok_or_else(|| Error::format(at, "element count overflows"))?;
        shape.push(e);
    }
    let start = HEADER_FIXED + 8 * rank;
    let payload = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::format(start, "payload size overflows"))?;
    need(start, payload, "payload")?;
    if bytes.len() != start + payload {
        return Err(Error::format(start + payload, format!("{} trailing bytes", bytes.len() - start - payload)));
    }
    let body = &bytes[start..];
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(&shape, body.chunks_exact(4).map(f32::read_le).collect())?),
        DType::F64 => AnyTensor::F64(Tensor::new(&shape, body.chunks_exact(8).map(f64::read_le).collect())?),
        DType::U8 => AnyTensor::U8(ByteTensor::new(&shape, body.to_vec())?),
    })
}

pub fn write_daug(path: impl AsRef<Path>, t: &AnyTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_daug(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Write a float tensor in its own precision.
pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let any = match T::DTYPE {
        DType::F32 => AnyTensor::F32(t.cast()),
        DType::F64 => AnyTensor::F64(t.cast()),
        DType::U8 => unreachable!("float scalars only"),
    };
    write_daug(path, &any)
}

/// Read a float tensor that must already be stored as `T`.
pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let any = read_daug(path)?;
    if any.dtype() != T::DTYPE {
        return Err(Error::Input(format!(
            "{} holds {:?}, expected {:?}",
            path.display(),
            any.dtype(),
            T::DTYPE
        )));
    }
    Ok(any.to_float())
}
