use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Root-mean-square error over all elements.
pub fn rmse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(target, "rmse")?;
    let sq: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum();
    Ok((sq / pred.numel() as f64).sqrt())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable Gaussian filtering over the valid region.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win.iter().enumerate().map(|(k, &g)| g * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(k, &g)| g * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, evaluated only where the window fits. Planes
/// of every sample and channel are pooled into one mean.
pub fn ssim<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, data_range: f64) -> Result<f64> {
    pred.expect_same_shape(target, "ssim")?;
    let s = pred.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::geometry(
            "ssim",
            format!(
                "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
                s.h, s.w
            ),
        ));
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let x: Vec<f64> = pred.plane(n, c).iter().map(|v| v.to_f64()).collect();
            let y: Vec<f64> = target.plane(n, c).iter().map(|v| v.to_f64()).collect();
            let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
            let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
            let f = |img: &[f64]| filter_valid(img, s.h, s.w, &win);
            let (mx, my, exx, eyy, exy) = (f(&x), f(&y), f(&xx), f(&yy), f(&xy));
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = exx[i] - ux * ux;
                let vy = eyy[i] - uy * uy;
                let cov = exy[i] - ux * uy;
                let num = (2.0 * ux * uy + c1) * (2.0 * cov + c2);
                let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}
