//! Spatial resampling: block averaging, bilinear interpolation,
//! depth-to-space and the fixed Haar sub-band filters.

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

fn require_even(op: &'static str, s: Shape) -> Result<()> {
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) || s.h == 0 || s.w == 0 {
        return Err(Error::geometry(
            op,
            format!("spatial dims of {s} must be even and nonzero"),
        ));
    }
    Ok(())
}

/// Mean of each disjoint 2x2 block.
pub fn avg_downsample2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    require_even("avg_downsample2", s)?;
    let quarter = T::from_f64(0.25);
    let out = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    Ok(Tensor::from_fn(out, |n, c, y, xx| {
        let p = x.plane(n, c);
        let (r0, r1) = (2 * y * s.w, (2 * y + 1) * s.w);
        (p[r0 + 2 * xx] + p[r0 + 2 * xx + 1] + p[r1 + 2 * xx] + p[r1 + 2 * xx + 1]) * quarter
    }))
}

pub fn avg_downsample2_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let s = grad_out.shape();
    let quarter = T::from_f64(0.25);
    Tensor::from_fn(Shape::new(s.n, s.c, s.h * 2, s.w * 2), |n, c, y, x| {
        grad_out.at(n, c, y / 2, x / 2) * quarter
    })
}

/// Interpolation taps for one axis: `(low index, high index, fraction)`.
fn corner_aligned_taps<T: Real>(len_in: usize, len_out: usize) -> Vec<(usize, usize, T)> {
    (0..len_out)
        .map(|o| {
            if len_in == 1 || len_out == 1 {
                return (0, 0, T::ZERO);
            }
            let pos = o as f64 * (len_in - 1) as f64 / (len_out - 1) as f64;
            let lo = (pos.floor() as usize).min(len_in - 1);
            let hi = (lo + 1).min(len_in - 1);
            (lo, hi, T::from_f64(pos - lo as f64))
        })
        .collect()
}

/// Bilinear upsampling by an integer factor on a corner-aligned grid:
/// output sample `o` reads input position `o * (in - 1) / (out - 1)`.
pub fn bilinear_upsample<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::geometry("bilinear_upsample", "factor must be positive"));
    }
    let s = x.shape();
    if factor == 1 {
        return Ok(x.clone());
    }
    let out = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let rows = corner_aligned_taps::<T>(s.h, out.h);
    let cols = corner_aligned_taps::<T>(s.w, out.w);
    Ok(Tensor::from_fn(out, |n, c, y, xx| {
        let p = x.plane(n, c);
        let (y0, y1, ty) = rows[y];
        let (x0, x1, tx) = cols[xx];
        // Difference form keeps constants exactly fixed.
        let top = p[y0 * s.w + x0] + tx * (p[y0 * s.w + x1] - p[y0 * s.w + x0]);
        let bottom = p[y1 * s.w + x0] + tx * (p[y1 * s.w + x1] - p[y1 * s.w + x0]);
        top + ty * (bottom - top)
    }))
}

pub fn bilinear_upsample_backward<T: Real>(grad_out: &Tensor<T>, input_shape: Shape, factor: usize) -> Tensor<T> {
    if factor == 1 {
        return grad_out.clone();
    }
    let s = input_shape;
    let g = grad_out.shape();
    let rows = corner_aligned_taps::<T>(s.h, g.h);
    let cols = corner_aligned_taps::<T>(s.w, g.w);
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = grad_out.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (y, &(y0, y1, ty)) in rows.iter().enumerate() {
                for (x, &(x0, x1, tx)) in cols.iter().enumerate() {
                    let v = src[y * g.w + x];
                    let top = v * (T::ONE - ty);
                    let bottom = v * ty;
                    dst[y0 * s.w + x0] += top * (T::ONE - tx);
                    dst[y0 * s.w + x1] += top * tx;
                    dst[y1 * s.w + x0] += bottom * (T::ONE - tx);
                    dst[y1 * s.w + x1] += bottom * tx;
                }
            }
        }
    }
    out
}

/// Rearranges `(n, c*r*r, h, w)` into `(n, c, h*r, w*r)`; input channel
/// `c*r*r + i*r + j` lands at offset `(i, j)` of each output `r x r` cell.
pub fn depth_to_space<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::dim(
            "depth_to_space",
            format!("{} channels not divisible by {r}^2", s.c),
        ));
    }
    let out = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    Ok(Tensor::from_fn(out, |n, c, y, xx| {
        x.at(n, c * r * r + (y % r) * r + xx % r, y / r, xx / r)
    }))
}

/// Inverse of [`depth_to_space`].
pub fn space_to_depth<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::geometry(
            "space_to_depth",
            format!("spatial dims of {s} not divisible by {r}"),
        ));
    }
    let out = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    Ok(Tensor::from_fn(out, |n, c, y, xx| {
        let (base, off) = (c / (r * r), c % (r * r));
        x.at(n, base, y * r + off / r, xx * r + off % r)
    }))
}

/// One of the four orthonormal 2x2 Haar sub-bands. The first letter names
/// the vertical (row) filter, the second the horizontal (column) filter,
/// with `L = [1 1]/sqrt2` and `H = [-1 1]/sqrt2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HaarBand {
    LL,
    LH,
    HL,
    HH,
}

impl HaarBand {
    pub const ALL: [HaarBand; 4] = [HaarBand::LL, HaarBand::LH, HaarBand::HL, HaarBand::HH];

    /// Row-major 2x2 kernel.
    pub fn kernel(self) -> [f64; 4] {
        match self {
            HaarBand::LL => [0.5, 0.5, 0.5, 0.5],
            HaarBand::LH => [-0.5, -0.5, 0.5, 0.5],
            HaarBand::HL => [-0.5, 0.5, -0.5, 0.5],
            HaarBand::HH => [0.5, -0.5, -0.5, 0.5],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HaarBand::LL => "ll",
            HaarBand::LH => "lh",
            HaarBand::HL => "hl",
            HaarBand::HH => "hh",
        }
    }

    /// Depthwise stride-2 correlation with this band's kernel.
    pub fn analyze<T: Real>(self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        require_even("haar_analysis", s)?;
        let k = self.kernel().map(T::from_f64);
        Ok(Tensor::from_fn(
            Shape::new(s.n, s.c, s.h / 2, s.w / 2),
            |n, c, y, xx| {
                let p = x.plane(n, c);
                let (r0, r1) = (2 * y * s.w + 2 * xx, (2 * y + 1) * s.w + 2 * xx);
                k[0] * p[r0] + k[1] * p[r0 + 1] + k[2] * p[r1] + k[3] * p[r1 + 1]
            },
        ))
    }

    /// Stride-2 transposed correlation with this band's kernel; the adjoint
    /// of [`HaarBand::analyze`].
    pub fn synthesize<T: Real>(self, band: &Tensor<T>) -> Tensor<T> {
        let s = band.shape();
        let k = self.kernel().map(T::from_f64);
        Tensor::from_fn(Shape::new(s.n, s.c, s.h * 2, s.w * 2), |n, c, y, x| {
            band.at(n, c, y / 2, x / 2) * k[(y % 2) * 2 + x % 2]
        })
    }
}
