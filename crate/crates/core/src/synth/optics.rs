use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{avg_downsample2, Shape, Tensor};

/// Illumination and blur parameters of the forward model.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticsConfig {
    /// Gaussian PSF standard deviation in low-resolution pixels.
    pub psf_sigma_lr: f64,
    /// Illumination frequency in cycles per high-resolution pixel.
    pub pattern_freq: f64,
    /// Fringe contrast in `[0, 1]`.
    pub modulation: f64,
    /// Pattern orientations in radians.
    pub angles: Vec<f64>,
    /// Pattern phase shifts in radians.
    pub phases: Vec<f64>,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        OpticsConfig {
            psf_sigma_lr: 0.6,
            pattern_freq: 0.2,
            modulation: 0.8,
            angles: (0..3).map(|k| k as f64 * PI / 3.0).collect(),
            phases: (0..5).map(|k| 2.0 * PI * k as f64 / 5.0).collect(),
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.pattern_freq) {
            return Err(Error::Config(format!(
                "pattern_freq {} must lie in [0, 0.5) cycles/pixel",
                self.pattern_freq
            )));
        }
        if !(0.0..=1.0).contains(&self.modulation) {
            return Err(Error::Config(format!("modulation {} outside [0, 1]", self.modulation)));
        }
        if self.psf_sigma_lr < 0.0 || !self.psf_sigma_lr.is_finite() {
            return Err(Error::Config(format!(
                "psf_sigma_lr {} must be >= 0",
                self.psf_sigma_lr
            )));
        }
        if self.angles.is_empty() || self.phases.is_empty() {
            return Err(Error::Config("need at least one angle and one phase".into()));
        }
        Ok(())
    }

    /// Number of raw frames per sample (angles x phases).
    pub fn frame_count(&self) -> usize {
        self.angles.len() * self.phases.len()
    }
}

/// Separable Gaussian blur with edge replication; the kernel is normalized
/// so constants are preserved.
pub fn gaussian_blur(img: &Tensor<f64>, sigma: f64) -> Tensor<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);

    let s = img.shape();
    let (h, w) = (s.h as isize, s.w as isize);
    let mut out = img.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = img.plane(n, c);
            let mut tmp = vec![0.0; src.len()];
            for y in 0..h {
                for x in 0..w {
                    tmp[(y * w + x) as usize] = k
                        .iter()
                        .enumerate()
                        .map(|(i, &kv)| kv * src[(y * w + (x + i as isize - r).clamp(0, w - 1)) as usize])
                        .sum();
                }
            }
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    dst[(y * w + x) as usize] = k
                        .iter()
                        .enumerate()
                        .map(|(i, &kv)| kv * tmp[((y + i as isize - r).clamp(0, h - 1) * w + x) as usize])
                        .sum();
                }
            }
        }
    }
    out
}

/// Sinusoidal illumination `(1 + m cos(2 pi f (x cos t + y sin t) + phase)) / 2`
/// on an `h x w` grid, with `x` the column and `y` the row index.
pub fn illumination(h: usize, w: usize, angle: f64, phase: f64, optics: &OpticsConfig) -> Tensor<f64> {
    let (ca, sa) = (angle.cos(), angle.sin());
    let k = 2.0 * PI * optics.pattern_freq;
    Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        (1.0 + optics.modulation * (k * (x as f64 * ca + y as f64 * sa) + phase).cos()) / 2.0
    })
}

/// Noise-free low-resolution frame of specimen `gt` (values in `[0, 1]`,
/// even size `2h x 2w`) under one illumination pattern: modulate, blur on
/// the fine grid, then bin 2x2.
pub fn render_si_frame(gt: &Tensor<f64>, angle: f64, phase: f64, optics: &OpticsConfig) -> Result<Tensor<f64>> {
    let s = gt.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::dim(
            "render_si_frame",
            format!("expects a 1x1xHxW specimen, got {s}"),
        ));
    }
    if gt.min_value() < 0.0 || gt.max_value() > 1.0 || !gt.all_finite() {
        return Err(Error::Contract(format!(
            "specimen values must lie in [0, 1], found [{}, {}]",
            gt.min_value(),
            gt.max_value()
        )));
    }
    let lit = gt.zip_map(&illumination(s.h, s.w, angle, phase, optics), |a, b| a * b)?;
    let blurred = gaussian_blur(&lit, 2.0 * optics.psf_sigma_lr);
    let frame = avg_downsample2(&blurred)?;
    Ok(frame.map(|v| v.clamp(0.0, 1.0)))
}

/// All frames of one specimen, angle-major then phase.
pub fn render_all(gt: &Tensor<f64>, optics: &OpticsConfig) -> Result<Vec<Tensor<f64>>> {
    let mut frames = Vec::with_capacity(optics.frame_count());
    for &angle in &optics.angles {
        for &phase in &optics.phases {
            frames.push(render_si_frame(gt, angle, phase, optics)?);
        }
    }
    Ok(frames)
}
