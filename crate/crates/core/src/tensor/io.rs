//! The `FLT1` tensor file format.
//!
//! Layout: magic `FLT1`, four little-endian `u32` dims `(n, c, h, w)`, one
//! dtype byte (0 = f32, 1 = f64), then raw little-endian values in storage
//! order. No compression, no trailer.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

pub const FLT1_MAGIC: &[u8; 4] = b"FLT1";
const HEADER_LEN: usize = 4 + 16 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Appends the `FLT1` encoding of `t` to `out`.
pub fn write_flt1<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.reserve(HEADER_LEN + t.numel() * T::DTYPE.width());
    out.extend_from_slice(FLT1_MAGIC);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(T::DTYPE.tag());
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Decodes one `FLT1` blob from the front of `bytes`, converting to `T` if
/// the stored dtype differs. Returns the tensor and the number of bytes
/// consumed.
pub fn read_flt1<T: Real>(bytes: &[u8]) -> std::result::Result<(Tensor<T>, usize), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != FLT1_MAGIC {
        return Err(format!("bad magic {:?}", &bytes[..4]));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2), dim(3));
    let dtype = DType::from_tag(bytes[20]).ok_or_else(|| format!("unknown dtype tag {}", bytes[20]))?;
    let width = dtype.width();
    let body = shape
        .numel()
        .checked_mul(width)
        .ok_or_else(|| format!("shape {shape} overflows"))?;
    let end = HEADER_LEN + body;
    if bytes.len() < end {
        return Err(format!(
            "truncated payload: shape {shape} needs {body} bytes, found {}",
            bytes.len() - HEADER_LEN
        ));
    }
    let payload = &bytes[HEADER_LEN..end];
    let data: Vec<T> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    let t = Tensor::from_vec(shape, data).map_err(|e| e.to_string())?;
    Ok((t, end))
}

pub fn write_flt1_file<T: Real>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_flt1(t, &mut buf);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a whole file holding exactly one `FLT1` tensor.
pub fn read_flt1_file<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::load(path, e.to_string()))?;
    let (t, used) = read_flt1::<T>(&bytes).map_err(|reason| Error::load(path, reason))?;
    if used != bytes.len() {
        return Err(Error::load(
            path,
            format!("{} trailing bytes after tensor", bytes.len() - used),
        ));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_flt1(&t, &mut buf);
        let mut expected = b"FLT1".to_vec();
        for d in [1u32, 2, 1, 1] {
            expected.extend_from_slice(&d.to_le_bytes());
        }
        expected.push(0);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_flt1::<f32>(b"FLT2").is_err());
        let mut buf = Vec::new();
        write_flt1(&Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2)), &mut buf);
        assert!(read_flt1::<f64>(&buf[..buf.len() - 1]).is_err());
        buf[20] = 9;
        assert!(read_flt1::<f64>(&buf).unwrap_err().contains("dtype"));
    }

    #[test]
    fn f32_file_widens_to_f64_exactly() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 3), vec![0.1, 65535.0, -3.0]).unwrap();
        let mut buf = Vec::new();
        write_flt1(&t, &mut buf);
        let (wide, _) = read_flt1::<f64>(&buf).unwrap();
        assert_eq!(wide.cast::<f32>(), t);
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_exact(
            dims in (1usize..3, 1usize..4, 1usize..5, 1usize..5),
            seed in any::<u64>(),
        ) {
            let shape = Shape::new(dims.0, dims.1, dims.2, dims.3);
            let mut s = seed;
            let t = Tensor::<f64>::from_fn(shape, |_, _, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits(s >> 2)
            });
            let mut buf = Vec::new();
            write_flt1(&t, &mut buf);
            let (back, used) = read_flt1::<f64>(&buf).unwrap();
            prop_assert_eq!(used, buf.len());
            prop_assert!(back.bit_eq(&t));
            let mut again = Vec::new();
            write_flt1(&back, &mut again);
            prop_assert_eq!(again, buf);
        }
    }
}
