//! 16-bit binary PGM (`P5`) reading and writing for single-channel images.

use flsn::tensor::{Shape, Tensor};

pub fn encode(t: &Tensor<f32>) -> Result<Vec<u8>, String> {
    let s = t.shape();
    if s.n * s.c != 1 {
        return Err(format!("PGM holds one grayscale image; tensor has shape {s}"));
    }
    let mut out = format!("P5\n{} {}\n65535\n", s.w, s.h).into_bytes();
    for &v in t.data() {
        let q = if v.is_nan() {
            0
        } else {
            v.round().clamp(0.0, 65535.0) as u16
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>, String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (expected magic P5)".into());
    }
    let mut num = |what: &str| -> Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} {t:?}"))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range 1..=65535"));
    }
    let start = pos + 1;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = w * h * width;
    let body = bytes
        .get(start..start + need)
        .ok_or_else(|| format!("truncated pixel data: need {need} bytes"))?;
    let data = if width == 1 {
        body.iter().map(|&b| b as f32).collect()
    } else {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32)
            .collect()
    };
    Tensor::from_vec(Shape::new(1, 1, h, w), data).map_err(|e| e.to_string())
}
