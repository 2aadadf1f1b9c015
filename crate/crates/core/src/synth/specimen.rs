use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Kind of synthetic specimen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    /// Smooth random curves with a Gaussian cross-section.
    Filaments,
    /// Isolated Gaussian spots.
    Puncta,
    /// Wider Gaussian spots whose detail lies mostly below the frame's
    /// Nyquist limit.
    Blobs,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Filaments => "filaments",
            Style::Puncta => "puncta",
            Style::Blobs => "blobs",
        })
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "filaments" => Ok(Style::Filaments),
            "puncta" => Ok(Style::Puncta),
            "blobs" => Ok(Style::Blobs),
            _ => Err(Error::Config(format!("unknown specimen style {s:?}"))),
        }
    }
}

/// Max-composites an isotropic Gaussian spot onto `img`.
fn stamp(img: &mut [f64], h: usize, w: usize, cy: f64, cx: f64, sigma: f64, peak: f64) {
    let r = (3.0 * sigma).ceil() as isize;
    let (iy, ix) = (cy.round() as isize, cx.round() as isize);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in (iy - r).max(0)..=(iy + r).min(h as isize - 1) {
        for x in (ix - r).max(0)..=(ix + r).min(w as isize - 1) {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let v = peak * (-(dy * dy + dx * dx) * inv).exp();
            let px = &mut img[y as usize * w + x as usize];
            if v > *px {
                *px = v;
            }
        }
    }
}

fn filaments(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let mut img = vec![0.0; h * w];
    let count = ((h * w) as f64 / 2048.0).round().max(3.0) as usize;
    let length = 0.8 * h.max(w) as f64;
    for _ in 0..count {
        let mut y = rng.gen_range(0.0..h as f64);
        let mut x = rng.gen_range(0.0..w as f64);
        let mut heading = rng.gen_range(0.0..2.0 * PI);
        let mut turn = 0.0;
        let sigma = rng.gen_range(0.8..1.3);
        let peak = rng.gen_range(0.5..1.0);
        let mut travelled = 0.0;
        while travelled < length {
            stamp(&mut img, h, w, y, x, sigma, peak);
            turn = 0.9 * turn + rng.gen_range(-0.02..0.02);
            heading += turn;
            y += 0.5 * heading.sin();
            x += 0.5 * heading.cos();
            travelled += 0.5;
        }
    }
    img
}

/// Randomly placed spots with widths drawn from `sigma`.
fn spots(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: std::ops::Range<f64>) -> Vec<f64> {
    let mut img = vec![0.0; h * w];
    let count = ((h * w) as f64 / 256.0).round().max(4.0) as usize;
    for _ in 0..count {
        let y = rng.gen_range(0.0..h as f64);
        let x = rng.gen_range(0.0..w as f64);
        stamp(
            &mut img,
            h,
            w,
            y,
            x,
            rng.gen_range(sigma.clone()),
            rng.gen_range(0.3..1.0),
        );
    }
    img
}

/// A synthetic high-resolution specimen of `h x w` pixels, normalized so
/// its maximum is 1. Fully determined by `seed`.
pub fn gen_ground_truth(seed: u64, h: usize, w: usize, style: Style) -> Result<Tensor<f64>> {
    if h == 0 || w == 0 || !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::geometry(
            "gen_ground_truth",
            format!("size {h}x{w} must be even and nonzero"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = match style {
        Style::Filaments => filaments(&mut rng, h, w),
        Style::Puncta => spots(&mut rng, h, w, 1.0..2.0),
        Style::Blobs => spots(&mut rng, h, w, 2.0..4.0),
    };
    let max = img.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        img.iter_mut().for_each(|v| *v /= max);
    } else {
        // Every structure landed outside the frame; fall back to a central spot.
        stamp(&mut img, h, w, h as f64 / 2.0, w as f64 / 2.0, 1.5, 1.0);
    }
    Tensor::from_vec(Shape::new(1, 1, h, w), img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        for style in [Style::Filaments, Style::Puncta, Style::Blobs] {
            let a = gen_ground_truth(5, 64, 48, style).unwrap();
            let b = gen_ground_truth(5, 64, 48, style).unwrap();
            let c = gen_ground_truth(6, 64, 48, style).unwrap();
            assert!(a.bit_eq(&b));
            assert!(!a.bit_eq(&c));
        }
    }

    #[test]
    fn normalized_and_nondegenerate() {
        for seed in 0..20 {
            for style in [Style::Filaments, Style::Puncta, Style::Blobs] {
                let g = gen_ground_truth(seed, 128, 128, style).unwrap();
                assert!(g.min_value() >= 0.0);
                assert!(g.max_value() <= 1.0);
                assert!(g.max_value() > 0.5);
            }
        }
    }

    /// Envelope measured over 100 seeds at 128x128 (observed range is
    /// reported on failure).
    #[test]
    fn filament_sparsity_envelope() {
        let fractions: Vec<f64> = (0..100)
            .map(|seed| {
                let g = gen_ground_truth(seed, 128, 128, Style::Filaments).unwrap();
                g.data().iter().filter(|&&v| v > 0.1).count() as f64 / g.numel() as f64
            })
            .collect();
        let lo = fractions.iter().copied().fold(1.0, f64::min);
        let hi = fractions.iter().copied().fold(0.0, f64::max);
        assert!(lo > 0.01 && hi < 0.5, "fraction above 0.1 ranged {lo}..{hi}");
    }

    #[test]
    fn odd_size_rejected() {
        assert!(gen_ground_truth(0, 63, 64, Style::Puncta).is_err());
    }

    #[test]
    fn style_parses() {
        assert_eq!("Filaments".parse::<Style>().unwrap(), Style::Filaments);
        assert!("dots".parse::<Style>().is_err());
    }
}
