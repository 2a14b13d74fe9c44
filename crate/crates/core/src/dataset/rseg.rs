//! RSEG tensor container.
//!
//! Little-endian layout: magic `RSEG`, `u32` version (1), `u8` dtype
//! (0 = f32, 1 = f64, 2 = u8), three reserved zero bytes, `u32` ndims,
//! `u64` dims, then the raw row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"RSEG";
pub const VERSION: u32 = 1;
/// Upper bound on the rank accepted when decoding.
pub const MAX_DIMS: usize = 16;

const HEADER_LEN: usize = 4 + 4 + 1 + 3 + 4;

/// Element types storable in an RSEG file.
pub trait Element: Copy + 'static {
    const DTYPE: DType;

    fn encode(values: &[Self]) -> Vec<u8>;

    /// Decodes a payload stored as `dtype`, or `None` when the conversion
    /// would lose information.
    fn decode(dtype: DType, payload: &[u8]) -> Option<Vec<Self>>;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn encode(values: &[f32]) -> Vec<u8> {
        <f32 as Scalar>::to_le_bytes_vec(values)
    }

    fn decode(dtype: DType, payload: &[u8]) -> Option<Vec<f32>> {
        (dtype == DType::F32).then(|| <f32 as Scalar>::from_le_bytes_slice(payload))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn encode(values: &[f64]) -> Vec<u8> {
        <f64 as Scalar>::to_le_bytes_vec(values)
    }

    fn decode(dtype: DType, payload: &[u8]) -> Option<Vec<f64>> {
        match dtype {
            DType::F64 => Some(<f64 as Scalar>::from_le_bytes_slice(payload)),
            DType::F32 => Some(<f32 as Scalar>::from_le_bytes_slice(payload).into_iter().map(f64::from).collect()),
            DType::U8 => None,
        }
    }
}

impl Element for u8 {
    const DTYPE: DType = DType::U8;

    fn encode(values: &[u8]) -> Vec<u8> {
        values.to_vec()
    }

    fn decode(dtype: DType, payload: &[u8]) -> Option<Vec<u8>> {
        (dtype == DType::U8).then(|| payload.to_vec())
    }
}

pub fn encode<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.ndim() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&[0; 3]);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&T::encode(t.data()));
    out
}

/// Decodes `bytes`; `path` only labels errors.
pub fn decode<T: Element>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let bad = |detail: String| Error::format(path, detail);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| bad(format!("unknown dtype code {}", bytes[8])))?;
    let ndims = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if ndims > MAX_DIMS {
        return Err(bad(format!("{ndims} dims exceed the limit of {MAX_DIMS}")));
    }
    let dims_end = HEADER_LEN + 8 * ndims;
    if bytes.len() < dims_end {
        return Err(bad("truncated dims".into()));
    }
    let mut shape = Vec::with_capacity(ndims);
    let mut numel: usize = 1;
    for chunk in bytes[HEADER_LEN..dims_end].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        let d = usize::try_from(d).map_err(|_| bad(format!("dim {d} overflows")))?;
        numel = numel.checked_mul(d).ok_or_else(|| bad("dim product overflows".into()))?;
        shape.push(d);
    }
    let payload_len = numel
        .checked_mul(dtype.size())
        .ok_or_else(|| bad("payload size overflows".into()))?;
    let payload = &bytes[dims_end..];
    if payload.len() != payload_len {
        return Err(bad(format!("payload holds {} bytes, shape {shape:?} needs {payload_len}", payload.len())));
    }
    let data = T::decode(dtype, payload)
        .ok_or_else(|| bad(format!("stored {dtype:?} cannot be read as {:?}", T::DTYPE)))?;
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn save<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::new(vec![2, 1], vec![1u8, 2]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"RSEG");
        assert_eq!(b[4..8], [1, 0, 0, 0]);
        assert_eq!(b[8], 2);
        assert_eq!(b[12..16], [2, 0, 0, 0]);
        assert_eq!(b[16..24], [2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(b[32..], [1, 2]);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let t = Tensor::from_fn(vec![3, 2, 2], |i| (i as f64 * 0.37).sin() * 1e-300);
        let back: Tensor<f64> = decode(&encode(&t), p()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn f32_widens_to_f64() {
        let t = Tensor::from_fn(vec![5], |i| i as f32 / 3.0);
        let wide: Tensor<f64> = decode(&encode(&t), p()).unwrap();
        for (w, n) in wide.data().iter().zip(t.data()) {
            assert_eq!(*w as f32, *n);
        }
        let narrow = decode::<f32>(&encode(&wide), p()).unwrap_err().to_string();
        assert!(narrow.contains("cannot be read"), "{narrow}");
    }

    #[test]
    fn corruption_is_named() {
        let t = Tensor::from_fn(vec![4], |i| i as f32);
        let mut b = encode(&t);
        b[0] = b'X';
        assert!(decode::<f32>(&b, p()).unwrap_err().to_string().contains("magic"));
        let mut b = encode(&t);
        b[4] = 2;
        assert!(decode::<f32>(&b, p()).unwrap_err().to_string().contains("version"));
        let b = encode(&t);
        assert!(decode::<f32>(&b[..b.len() - 1], p()).unwrap_err().to_string().contains("payload"));
        let mut b = encode(&t);
        b[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        let err = decode::<f32>(&b, p()).unwrap_err().to_string();
        assert!(err.contains("overflow"), "{err}");
    }
}
