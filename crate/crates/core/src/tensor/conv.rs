//! Cross-correlation and its adjoint via im2col and GEMM.
//!
//! Work is split across samples with rayon. Every output element is computed
//! by the same sequence of floating-point operations regardless of thread
//! count, and cross-sample reductions (kernel and bias gradients) are summed
//! in sample order, so results are bit-identical to a sequential run.

use rayon::prelude::*;

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Stride and zero padding shared by the forward and adjoint passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry { stride, padding }
    }

    /// "Same" geometry for an odd kernel at stride 1.
    pub fn same(kernel: usize) -> Self {
        ConvGeometry::new(1, kernel / 2)
    }

    fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

/// Dimensions of one im2col problem.
#[derive(Clone, Copy)]
struct Patch {
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeometry,
}

impl Patch {
    fn rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel for output `(oy, ox)` under tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.geom.stride + ky).checked_sub(self.geom.padding)?;
        let x = (ox * self.geom.stride + kx).checked_sub(self.geom.padding)?;
        (y < self.h && x < self.w).then_some(y * self.w + x)
    }

    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let plane = self.h * self.w;
        let ncols = self.cols();
        for ci in 0..self.in_c {
            let src = &image[ci * plane..(ci + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            dst[oy * self.ow + ox] = match self.source(oy, ox, ky, kx) {
                                Some(i) => src[i],
                                None => T::ZERO,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back onto the image (adjoint of `im2col`).
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let plane = self.h * self.w;
        let ncols = self.cols();
        for ci in 0..self.in_c {
            let dst = &mut image[ci * plane..(ci + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some(i) = self.source(oy, ox, ky, kx) {
                                dst[i] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_patch(op: &'static str, x: Shape, k: Shape, geom: ConvGeometry) -> Result<Patch> {
    if geom.stride == 0 {
        return Err(Error::geometry(op, "stride must be positive"));
    }
    let oh = geom.output_len(x.h, k.h);
    let ow = geom.output_len(x.w, k.w);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(Patch {
            in_c: x.c,
            h: x.h,
            w: x.w,
            kh: k.h,
            kw: k.w,
            oh,
            ow,
            geom,
        }),
        _ => Err(Error::geometry(
            op,
            format!(
                "input {x} with kernel {}x{}, stride {}, padding {} yields an empty output",
                k.h, k.w, geom.stride, geom.padding
            ),
        )),
    }
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, out_c: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != out_c {
            return Err(Error::dim(
                op,
                format!("bias {} does not match {out_c} output channels", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Cross-correlation of `input` (n, in_c, h, w) with `kernel`
/// (out_c, in_c, kh, kw), plus an optional per-channel bias.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let (xs, ks) = (input.shape(), kernel.shape());
    if xs.c != ks.c {
        return Err(Error::dim(
            "conv2d",
            format!("input {xs} has {} channels but kernel {ks} expects {}", xs.c, ks.c),
        ));
    }
    check_bias("conv2d", bias, ks.n)?;
    let p = conv_patch("conv2d", xs, ks, geom)?;
    let out_shape = Shape::new(xs.n, ks.n, p.oh, p.ow);
    let per_out = ks.n * p.cols();
    let mut out = vec![T::ZERO; out_shape.numel()];
    out.par_chunks_mut(per_out.max(1)).enumerate().for_each(|(n, dst)| {
        let mut cols = vec![T::ZERO; p.rows() * p.cols()];
        p.im2col(input.sample(n), &mut cols);
        // dst (out_c x cols) = K (out_c x rows) * cols (rows x cols)
        T::gemm(
            ks.n,
            p.rows(),
            p.cols(),
            kernel.data(),
            (p.rows() as isize, 1),
            &cols,
            (p.cols() as isize, 1),
            T::ZERO,
            dst,
            (p.cols() as isize, 1),
        );
        if let Some(b) = bias {
            for (oc, row) in dst.chunks_mut(p.cols()).enumerate() {
                let bv = b.data()[oc];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

/// Input, kernel and optional bias gradients.
pub type ConvGrads<T> = (Tensor<T>, Tensor<T>, Option<Tensor<T>>);

/// Gradients of [`conv2d`] with respect to input, kernel and (if
/// `with_bias`) bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    with_bias: bool,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<ConvGrads<T>> {
    let (xs, ks) = (input.shape(), kernel.shape());
    let p = conv_patch("conv2d_backward", xs, ks, geom)?;
    let gs = grad_out.shape();
    if gs != Shape::new(xs.n, ks.n, p.oh, p.ow) {
        return Err(Error::dim(
            "conv2d_backward",
            format!("upstream gradient {gs} does not match output geometry"),
        ));
    }
    let per_in = xs.c * xs.plane();
    let mut grad_in = vec![T::ZERO; xs.numel()];
    let partials: Vec<Vec<T>> = grad_in
        .par_chunks_mut(per_in.max(1))
        .enumerate()
        .map(|(n, gx)| {
            let mut cols = vec![T::ZERO; p.rows() * p.cols()];
            p.im2col(input.sample(n), &mut cols);
            let gy = grad_out.sample(n);
            // dK_n (out_c x rows) = gy (out_c x cols) * cols^T
            let mut gk = vec![T::ZERO; ks.numel()];
            T::gemm(
                ks.n,
                p.cols(),
                p.rows(),
                gy,
                (p.cols() as isize, 1),
                &cols,
                (1, p.cols() as isize),
                T::ZERO,
                &mut gk,
                (p.rows() as isize, 1),
            );
            // dcols (rows x cols) = K^T (rows x out_c) * gy (out_c x cols)
            T::gemm(
                p.rows(),
                ks.n,
                p.cols(),
                kernel.data(),
                (1, p.rows() as isize),
                gy,
                (p.cols() as isize, 1),
                T::ZERO,
                &mut cols,
                (p.cols() as isize, 1),
            );
            p.col2im(&cols, gx);
            gk
        })
        .collect();
    let mut grad_k = vec![T::ZERO; ks.numel()];
    for part in &partials {
        for (a, &b) in grad_k.iter_mut().zip(part) {
            *a += b;
        }
    }
    let grad_b = with_bias.then(|| {
        let mut gb = vec![T::ZERO; ks.n];
        for n in 0..gs.n {
            for (oc, acc) in gb.iter_mut().enumerate() {
                *acc += grad_out.plane(n, oc).iter().copied().sum::<T>();
            }
        }
        Tensor::from_vec(Shape::new(1, ks.n, 1, 1), gb).expect("bias shape")
    });
    Ok((Tensor::from_vec(xs, grad_in)?, Tensor::from_vec(ks, grad_k)?, grad_b))
}

fn transposed_patch(op: &'static str, x: Shape, k: Shape, stride: usize) -> Result<(Patch, Shape)> {
    if x.c != k.n {
        return Err(Error::dim(
            op,
            format!("input {x} has {} channels but kernel {k} expects {}", x.c, k.n),
        ));
    }
    if stride == 0 {
        return Err(Error::geometry(op, "stride must be positive"));
    }
    if x.h == 0 || x.w == 0 {
        return Err(Error::geometry(op, format!("empty input {x}")));
    }
    let out = Shape::new(x.n, k.c, (x.h - 1) * stride + k.h, (x.w - 1) * stride + k.w);
    // The forward conv this is the adjoint of maps `out` back onto `x`.
    let p = Patch {
        in_c: k.c,
        h: out.h,
        w: out.w,
        kh: k.h,
        kw: k.w,
        oh: x.h,
        ow: x.w,
        geom: ConvGeometry::new(stride, 0),
    };
    Ok((p, out))
}

/// Adjoint of [`conv2d`] with zero padding: `kernel` is (in_c, out_c, kh, kw)
/// where `in_c` matches `input`'s channels, and the output is
/// `(h - 1) * stride + kh` by `(w - 1) * stride + kw`.
pub fn conv2d_transposed<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (xs, ks) = (input.shape(), kernel.shape());
    let (p, out_shape) = transposed_patch("conv2d_transposed", xs, ks, stride)?;
    let per_out = out_shape.c * out_shape.plane();
    let mut out = vec![T::ZERO; out_shape.numel()];
    out.par_chunks_mut(per_out.max(1)).enumerate().for_each(|(n, dst)| {
        let mut cols = vec![T::ZERO; p.rows() * p.cols()];
        T::gemm(
            p.rows(),
            ks.n,
            p.cols(),
            kernel.data(),
            (1, p.rows() as isize),
            input.sample(n),
            (p.cols() as isize, 1),
            T::ZERO,
            &mut cols,
            (p.cols() as isize, 1),
        );
        p.col2im(&cols, dst);
    });
    Tensor::from_vec(out_shape, out)
}

/// Gradients of [`conv2d_transposed`] with respect to input and kernel.
pub fn conv2d_transposed_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (xs, ks) = (input.shape(), kernel.shape());
    let (p, out_shape) = transposed_patch("conv2d_transposed_backward", xs, ks, stride)?;
    if grad_out.shape() != out_shape {
        return Err(Error::dim(
            "conv2d_transposed_backward",
            format!("upstream gradient {} does not match {out_shape}", grad_out.shape()),
        ));
    }
    let per_in = xs.c * xs.plane();
    let mut grad_in = vec![T::ZERO; xs.numel()];
    let partials: Vec<Vec<T>> = grad_in
        .par_chunks_mut(per_in.max(1))
        .enumerate()
        .map(|(n, gx)| {
            let mut cols = vec![T::ZERO; p.rows() * p.cols()];
            p.im2col(grad_out.sample(n), &mut cols);
            // d input = K (in_c x rows) * cols
            T::gemm(
                ks.n,
                p.rows(),
                p.cols(),
                kernel.data(),
                (p.rows() as isize, 1),
                &cols,
                (p.cols() as isize, 1),
                T::ZERO,
                gx,
                (p.cols() as isize, 1),
            );
            // dK_n = x_n (in_c x cols) * cols^T
            let mut gk = vec![T::ZERO; ks.numel()];
            T::gemm(
                ks.n,
                p.cols(),
                p.rows(),
                input.sample(n),
                (p.cols() as isize, 1),
                &cols,
                (1, p.cols() as isize),
                T::ZERO,
                &mut gk,
                (p.rows() as isize, 1),
            );
            gk
        })
        .collect();
    let mut grad_k = vec![T::ZERO; ks.numel()];
    for part in &partials {
        for (a, &b) in grad_k.iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok((Tensor::from_vec(xs, grad_in)?, Tensor::from_vec(ks, grad_k)?))
}
