//! Binary array container.
//!
//! Layout: the magic line `PTYD1\n`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dims, a `u32` dtype code, then the row-major payload.
//! Complex values are stored interleaved (re, im).

use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use super::write_atomic;
use crate::error::{PtychoError, Result};

pub const MAGIC: &[u8; 6] = b"PTYD1\n";

/// Storage type of a container payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    /// Interleaved `f32` pairs.
    C64 = 1,
    F64 = 2,
    /// Interleaved `f64` pairs; used for reconstructions so they round-trip exactly.
    C128 = 3,
}

impl Dtype {
    fn from_code(code: u32) -> Option<Dtype> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::C64),
            2 => Some(Dtype::F64),
            3 => Some(Dtype::C128),
            _ => None,
        }
    }

    pub fn is_complex(self) -> bool {
        matches!(self, Dtype::C64 | Dtype::C128)
    }

    fn scalar_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::C64 | Dtype::F64 => 8,
            Dtype::C128 => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// An n-dimensional array as read from or written to a container.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub payload: Payload,
}

fn format_err(path: &Path, reason: impl Into<String>) -> PtychoError {
    PtychoError::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Serialize `array` to bytes.
pub fn encode(array: &RawArray) -> Result<Vec<u8>> {
    let count: usize = array.dims.iter().product();
    let len = match &array.payload {
        Payload::Real(v) if !array.dtype.is_complex() => v.len(),
        Payload::Complex(v) if array.dtype.is_complex() => v.len(),
        _ => return Err(PtychoError::InvalidParam("payload does not match dtype".into())),
    };
    if len != count {
        return Err(PtychoError::Shape(format!("{len} values for dims {:?}", array.dims)));
    }
    let mut out = Vec::with_capacity(MAGIC.len() + 4 * (array.dims.len() + 2) + count * array.dtype.scalar_bytes());
    out.extend_from_slice(MAGIC);
    let rank = u32::try_from(array.dims.len()).map_err(|_| PtychoError::InvalidParam("rank too large".into()))?;
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| PtychoError::InvalidParam(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(array.dtype as u32).to_le_bytes());
    match (&array.payload, array.dtype) {
        (Payload::Real(v), Dtype::F32) => v.iter().for_each(|x| out.extend_from_slice(&(*x as f32).to_le_bytes())),
        (Payload::Real(v), _) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        (Payload::Complex(v), Dtype::C64) => v.iter().for_each(|z| {
            out.extend_from_slice(&(z.re as f32).to_le_bytes());
            out.extend_from_slice(&(z.im as f32).to_le_bytes());
        }),
        (Payload::Complex(v), _) => v.iter().for_each(|z| {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }),
    }
    Ok(out)
}

/// Parse a container; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<RawArray> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err(path, "missing PTYD1 magic"));
    }
    let mut words = bytes[MAGIC.len()..].chunks_exact(4).map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]));
    let rank = words.next().ok_or_else(|| format_err(path, "truncated header"))? as usize;
    let dims: Vec<usize> = (0..rank)
        .map(|_| words.next().map(|d| d as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| format_err(path, "truncated header"))?;
    let code = words.next().ok_or_else(|| format_err(path, "truncated header"))?;
    let dtype = Dtype::from_code(code).ok_or_else(|| format_err(path, format!("unknown dtype code {code}")))?;
    let body = &bytes[MAGIC.len() + 4 * (rank + 2)..];
    let count =
        dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| format_err(path, "dims overflow"))?;
    if Some(body.len()) != count.checked_mul(dtype.scalar_bytes()) {
        return Err(format_err(
            path,
            format!("payload has {} bytes, dims {dims:?} need {}", body.len(), count * dtype.scalar_bytes()),
        ));
    }
    let f32s = || body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let f64s = || body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
    let payload = match dtype {
        Dtype::F32 => Payload::Real(f32s().collect()),
        Dtype::F64 => Payload::Real(f64s().collect()),
        Dtype::C64 => {
            let v: Vec<f64> = f32s().collect();
            Payload::Complex(v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
        }
        Dtype::C128 => {
            let v: Vec<f64> = f64s().collect();
            Payload::Complex(v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
        }
    };
    Ok(RawArray { dims, dtype, payload })
}

pub fn write_array(path: &Path, array: &RawArray) -> Result<()> {
    write_atomic(path, &encode(array)?)
}

pub fn read_array(path: &Path) -> Result<RawArray> {
    let bytes = std::fs::read(path).map_err(|e| PtychoError::io(path, e))?;
    decode(&bytes, path)
}

/// Frames of equal shape as a rank-3 real array.
pub fn real_stack(frames: &[Array2<f64>], dtype: Dtype) -> Result<RawArray> {
    let (r, c) = frames.first().map(|f| f.dim()).unwrap_or((0, 0));
    if frames.iter().any(|f| f.dim() != (r, c)) {
        return Err(PtychoError::Shape("frames differ in shape".into()));
    }
    let payload = frames.iter().flat_map(|f| f.iter().copied()).collect();
    Ok(RawArray { dims: vec![frames.len(), r, c], dtype, payload: Payload::Real(payload) })
}

/// Arrays of equal shape as a rank-3 complex array.
pub fn complex_stack(items: &[Array2<Complex64>], dtype: Dtype) -> Result<RawArray> {
    let (r, c) = items.first().map(|f| f.dim()).unwrap_or((0, 0));
    if items.iter().any(|f| f.dim() != (r, c)) {
        return Err(PtychoError::Shape("arrays differ in shape".into()));
    }
    let payload = items.iter().flat_map(|f| f.iter().copied()).collect();
    Ok(RawArray { dims: vec![items.len(), r, c], dtype, payload: Payload::Complex(payload) })
}

fn as_rank3(array: &RawArray, path: &Path) -> Result<(usize, usize, usize)> {
    match array.dims[..] {
        [n, r, c] => Ok((n, r, c)),
        [r, c] => Ok((1, r, c)),
        _ => Err(format_err(path, format!("expected a 2-D or 3-D array, found dims {:?}", array.dims))),
    }
}

/// Read a real rank-2 or rank-3 array as a list of frames.
pub fn read_real_stack(path: &Path) -> Result<Vec<Array2<f64>>> {
    let array = read_array(path)?;
    let (n, r, c) = as_rank3(&array, path)?;
    let Payload::Real(data) = array.payload else {
        return Err(format_err(path, "expected real data"));
    };
    let all = Array3::from_shape_vec((n, r, c), data).map_err(|e| format_err(path, e.to_string()))?;
    Ok(all.outer_iter().map(|f| f.to_owned()).collect())
}

/// Read a complex rank-2 or rank-3 array as a list of 2-D arrays.
pub fn read_complex_stack(path: &Path) -> Result<Vec<Array2<Complex64>>> {
    let array = read_array(path)?;
    let (n, r, c) = as_rank3(&array, path)?;
    let Payload::Complex(data) = array.payload else {
        return Err(format_err(path, "expected complex data"));
    };
    let all = Array3::from_shape_vec((n, r, c), data).map_err(|e| format_err(path, e.to_string()))?;
    Ok(all.outer_iter().map(|f| f.to_owned()).collect())
}

pub fn write_complex(path: &Path, image: &Array2<Complex64>, dtype: Dtype) -> Result<()> {
    let (r, c) = image.dim();
    let payload = Payload::Complex(image.iter().copied().collect());
    write_array(path, &RawArray { dims: vec![r, c], dtype, payload })
}

pub fn read_complex(path: &Path) -> Result<Array2<Complex64>> {
    let mut items = read_complex_stack(path)?;
    if items.len() != 1 {
        return Err(format_err(path, format!("expected one 2-D array, found {}", items.len())));
    }
    Ok(items.remove(0))
}
