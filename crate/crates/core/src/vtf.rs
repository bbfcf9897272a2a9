//! Minimal binary tensor file format ("VTFB").
//!
//! Layout, all little-endian:
//!
//! | bytes            | content                       |
//! |------------------|-------------------------------|
//! | 0..4             | magic `VTFB`                  |
//! | 4..8             | version, `u32` = 1            |
//! | 8                | dtype code, `u8` (0 = f32 LE) |
//! | 9                | rank, `u8`                    |
//! | 10..10+8*rank    | dims, `u64` each              |
//! | rest             | row-major payload             |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"VTFB";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_RANK: usize = 8;
const FIXED_HEADER: usize = 10;

/// Serialize a tensor; elements are stored as `f32`.
pub fn encode<T: Scalar>(tensor: &Tensor<T>) -> Result<Vec<u8>> {
    let shape = tensor.shape();
    if shape.len() > MAX_RANK {
        return Err(Error::InvalidArgument(format!("rank {} exceeds {MAX_RANK}", shape.len())));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidArgument(format!("zero-sized dimension in {shape:?}")));
    }
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * shape.len() + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in tensor.data() {
        let f = v.to_f32().ok_or_else(|| Error::NonFinite("value not representable as f32".into()))?;
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < FIXED_HEADER {
        return Err(Error::Truncated { expected: FIXED_HEADER, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = bytes[8];
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let rank = bytes[9] as usize;
    if rank > MAX_RANK {
        return Err(Error::InvalidHeader(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let dims_end = FIXED_HEADER + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Truncated { expected: dims_end, found: bytes.len() });
    }
    let shape: Vec<usize> = bytes[FIXED_HEADER..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if shape.contains(&0) {
        return Err(Error::InvalidHeader(format!("zero-sized dimension in {shape:?}")));
    }
    let expected = shape
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .and_then(|p| p.checked_add(dims_end))
        .ok_or_else(|| Error::InvalidHeader(format!("dims {shape:?} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::InvalidHeader(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let data = bytes[dims_end..]
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).expect("f32 widening"))
        .collect();
    debug_assert_eq!(numel(&shape) * 4, bytes.len() - dims_end);
    Tensor::new(shape, data)
}

/// Write atomically: the payload goes to a sibling temp file first.
pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let bytes = encode(tensor)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
