//! Binary tensor files.
//!
//! Layout, all little-endian: magic `BTAT`, `u16` version, `u8` dtype code
//! (1 = f32, 2 = f64), `u8` rank, `rank` × `u64` dims, then the row-major
//! payload.

use std::path::Path;

use bta_tensor::{DType, Scalar, TensorData};

use super::{write_atomic, FormatError};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BTAT";
pub const VERSION: u16 = 1;

/// Header length for a tensor of the given rank.
pub fn header_len(rank: usize) -> usize {
    4 + 2 + 1 + 1 + 8 * rank
}

/// A decoded tensor of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(TensorData<f32>),
    F64(TensorData<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`, rounding when narrowing.
    pub fn cast<T: Scalar>(&self) -> TensorData<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    /// The tensor as `T`, failing unless the stored dtype is `T`.
    pub fn exact<T: Scalar>(&self) -> Result<TensorData<T>, FormatError> {
        if self.dtype() != T::DTYPE {
            return Err(FormatError::DTypeMismatch {
                expected: T::DTYPE.name(),
                found: self.dtype().name(),
            });
        }
        Ok(self.cast())
    }
}

pub fn encode_tensor<T: Scalar>(t: &TensorData<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(t.rank()) + t.len() * T::DTYPE.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(u8::try_from(t.rank()).expect("tensor rank fits in a byte"));
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Splits `n` bytes off the front of `bytes`.
pub(crate) fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
    if bytes.len() < n {
        return Err(FormatError::Truncated {
            what,
            expected: n,
            actual: bytes.len(),
        });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub(crate) fn check_magic(bytes: &mut &[u8], magic: [u8; 4]) -> Result<(), FormatError> {
    let available = bytes.len().min(4);
    if available < 4 || bytes[..4] != magic {
        return Err(FormatError::BadMagic {
            expected: magic,
            found: bytes[..available].to_vec(),
        });
    }
    *bytes = &bytes[4..];
    Ok(())
}

pub(crate) fn read_version(bytes: &mut &[u8], supported: u16) -> Result<(), FormatError> {
    let v = u16::from_le_bytes(take(bytes, 2, "header")?.try_into().expect("two bytes"));
    if v != supported {
        return Err(FormatError::UnsupportedVersion { found: v, supported });
    }
    Ok(())
}

pub(crate) fn read_dtype(bytes: &mut &[u8]) -> Result<DType, FormatError> {
    let code = take(bytes, 1, "header")?[0];
    DType::from_code(code).ok_or(FormatError::UnknownDType(code))
}

pub(crate) fn read_values<T: Scalar>(bytes: &mut &[u8], count: usize, what: &'static str) -> Result<Vec<T>, FormatError> {
    let width = T::DTYPE.size();
    let n = count.checked_mul(width).ok_or(FormatError::Overflow(vec![count as u64]))?;
    let raw = take(bytes, n, what)?;
    Ok(raw.chunks_exact(width).map(T::read_le).collect())
}

pub fn decode_tensor(bytes: &[u8]) -> Result<AnyTensor, FormatError> {
    let mut b = bytes;
    check_magic(&mut b, MAGIC)?;
    read_version(&mut b, VERSION)?;
    let dtype = read_dtype(&mut b)?;
    let rank = take(&mut b, 1, "header")?[0] as usize;
    let dims: Vec<u64> = take(&mut b, 8 * rank, "header")?
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    let shape = dims
        .iter()
        .map(|&d| usize::try_from(d).ok())
        .collect::<Option<Vec<usize>>>()
        .ok_or_else(|| FormatError::Overflow(dims.clone()))?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::Overflow(dims.clone()))?;
    let t = match dtype {
        DType::F32 => AnyTensor::F32(
            TensorData::new(shape, read_values(&mut b, count, "payload")?).expect("length checked"),
        ),
        DType::F64 => AnyTensor::F64(
            TensorData::new(shape, read_values(&mut b, count, "payload")?).expect("length checked"),
        ),
    };
    if !b.is_empty() {
        return Err(FormatError::TrailingBytes(b.len()));
    }
    Ok(t)
}

pub fn write_tensor_file<T: Scalar>(t: &TensorData<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn read_tensor_file(path: &Path) -> Result<AnyTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_tensor(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_arithmetic() {
        let t = TensorData::<f32>::zeros(vec![8, 512]);
        let bytes = encode_tensor(&t);
        assert_eq!(header_len(2), 24);
        assert_eq!(bytes.len() - 24, 16384);
    }

    #[test]
    fn scalar_round_trip() {
        let t = TensorData::scalar(2.5f64);
        assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), AnyTensor::F64(t));
    }
}
