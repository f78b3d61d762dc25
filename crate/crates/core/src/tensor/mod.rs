//! Tensor storage and the on-disk formats shared by every engine.
//!
//! - [`Tensor`]: shape plus a typed, row-major buffer (`f32`, `i8`, `i32`,
//!   packed `u4`, `u8`).
//! - [`container`]: the flat `.vimq` container (magic `VIMQ`, little-endian).
//! - [`packing`]: 256-bit packed weight blobs laid out in linear-engine tile
//!   traversal order (`.vimqw` files).

pub mod container;
pub mod packing;

pub use container::{read_container, write_container, Container};
pub use packing::{pack_codes, pack_weights, unpack_weights, PackedLayout, PackedWeightBlob, WORD_BYTES};

use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    I8,
    I32,
    /// Two 4-bit codes per byte, low nibble first.
    U4,
    U8,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
            DType::I32 => 2,
            DType::U4 => 3,
            DType::U8 => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => DType::F32,
            1 => DType::I8,
            2 => DType::I32,
            3 => DType::U4,
            4 => DType::U8,
            t => return Err(Error::Format(format!("unsupported dtype tag {t}"))),
        })
    }

    /// Bytes needed to store `numel` elements.
    pub fn storage_bytes(self, numel: usize) -> usize {
        match self {
            DType::F32 | DType::I32 => numel * 4,
            DType::I8 | DType::U8 => numel,
            DType::U4 => numel.div_ceil(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
    /// Packed nibbles; `numel` codes stored in `numel.div_ceil(2)` bytes.
    U4(Vec<u8>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let n = numel_of(shape);
    if n != len {
        return Err(Error::Shape(format!("shape {shape:?} has {n} elements, buffer has {len}")));
    }
    Ok(())
}

impl Tensor {
    pub fn f32(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self { shape: shape.to_vec(), data: TensorData::F32(data) })
    }

    /// Symmetric int8; `-128` is rejected since the quantizer never emits it.
    pub fn i8(shape: &[usize], data: Vec<i8>) -> Result<Self> {
        check_len(shape, data.len())?;
        if data.contains(&i8::MIN) {
            return Err(Error::Format("i8 tensor holds -128 outside the symmetric range".into()));
        }
        Ok(Self { shape: shape.to_vec(), data: TensorData::I8(data) })
    }

    pub fn i32(shape: &[usize], data: Vec<i32>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self { shape: shape.to_vec(), data: TensorData::I32(data) })
    }

    pub fn u8(shape: &[usize], data: Vec<u8>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self { shape: shape.to_vec(), data: TensorData::U8(data) })
    }

    /// Packs one 4-bit code per element (values must be < 16).
    pub fn u4_from_codes(shape: &[usize], codes: &[u8]) -> Result<Self> {
        check_len(shape, codes.len())?;
        if let Some(bad) = codes.iter().find(|&&c| c > 0x0f) {
            return Err(Error::Format(format!("code {bad} does not fit in 4 bits")));
        }
        let mut packed = vec![0u8; codes.len().div_ceil(2)];
        for (i, &c) in codes.iter().enumerate() {
            packed[i / 2] |= c << (4 * (i % 2));
        }
        Ok(Self { shape: shape.to_vec(), data: TensorData::U4(packed) })
    }

    pub fn from_mat(m: &Mat) -> Self {
        Self { shape: vec![m.rows, m.cols], data: TensorData::F32(m.data.clone()) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.shape)
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
            TensorData::I32(_) => DType::I32,
            TensorData::U4(_) => DType::U4,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(Error::Format(format!("expected f32 tensor, found {:?}", self.dtype()))),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Ok(v),
            _ => Err(Error::Format(format!("expected i32 tensor, found {:?}", self.dtype()))),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            _ => Err(Error::Format(format!("expected u8 tensor, found {:?}", self.dtype()))),
        }
    }

    /// One code per element for `U4` and `U8` tensors.
    pub fn codes(&self) -> Result<Vec<u8>> {
        match &self.data {
            TensorData::U4(p) => {
                Ok((0..self.numel()).map(|i| (p[i / 2] >> (4 * (i % 2))) & 0x0f).collect())
            }
            TensorData::U8(v) => Ok(v.clone()),
            _ => Err(Error::Format(format!("expected code tensor, found {:?}", self.dtype()))),
        }
    }

    /// Interprets a rank-2 f32 tensor as a matrix.
    pub fn to_mat(&self) -> Result<Mat> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!("expected rank-2 tensor, got shape {:?}", self.shape)));
        }
        Mat::new(self.shape[0], self.shape[1], self.as_f32()?.to_vec())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match &self.data {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I8(v) => v.iter().map(|&x| x as u8).collect(),
            TensorData::U4(v) | TensorData::U8(v) => v.clone(),
        }
    }

    pub fn from_le_bytes(dtype: DType, shape: &[usize], bytes: &[u8]) -> Result<Self> {
        let n = numel_of(shape);
        if bytes.len() != dtype.storage_bytes(n) {
            return Err(Error::Format(format!(
                "{dtype:?} tensor of shape {shape:?} needs {} bytes, got {}",
                dtype.storage_bytes(n),
                bytes.len()
            )));
        }
        let shape = shape.to_vec();
        let data = match dtype {
            DType::F32 => TensorData::F32(
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            ),
            DType::I32 => TensorData::I32(
                bytes.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            ),
            DType::I8 => {
                let v: Vec<i8> = bytes.iter().map(|&b| b as i8).collect();
                return Tensor::i8(&shape, v);
            }
            DType::U4 => {
                if n % 2 == 1 && bytes[n / 2] >> 4 != 0 {
                    return Err(Error::Format("stray bits in trailing u4 nibble".into()));
                }
                TensorData::U4(bytes.to_vec())
            }
            DType::U8 => TensorData::U8(bytes.to_vec()),
        };
        Ok(Self { shape, data })
    }
}
