use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest value of the 16-bit intensity range.
pub const INTENSITY_MAX: f64 = 65535.0;

/// Exposure regime: standard light, or 1% laser power with short exposure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    High,
    Low,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::High => "HE",
            Regime::Low => "LE",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HE" => Ok(Regime::High),
            "LE" => Ok(Regime::Low),
            _ => Err(Error::Config(format!("unknown regime {s:?} (expected HE or LE)"))),
        }
    }
}

/// Shot and read noise of the simulated camera.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub regime: Regime,
    /// Expected photons at unit intensity.
    pub photon_scale: f64,
    /// Gaussian read noise standard deviation, in photon counts.
    pub read_sigma: f64,
}

/// Photons at unit intensity under standard illumination.
pub const HE_PHOTON_SCALE: f64 = 2000.0;
/// Low exposure keeps 1% of the photons.
pub const LE_PHOTON_SCALE: f64 = HE_PHOTON_SCALE * 0.01;
pub const DEFAULT_READ_SIGMA: f64 = 2.0;

impl NoiseConfig {
    pub fn for_regime(regime: Regime) -> Self {
        NoiseConfig {
            regime,
            photon_scale: match regime {
                Regime::High => HE_PHOTON_SCALE,
                Regime::Low => LE_PHOTON_SCALE,
            },
            read_sigma: DEFAULT_READ_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.photon_scale > 0.0 && self.photon_scale.is_finite()) {
            return Err(Error::Config(format!(
                "photon_scale {} must be positive",
                self.photon_scale
            )));
        }
        if !(self.read_sigma >= 0.0 && self.read_sigma.is_finite()) {
            return Err(Error::Config(format!("read_sigma {} must be >= 0", self.read_sigma)));
        }
        Ok(())
    }

    /// Counts-to-intensity factor; unit intensity lands at `65535 / 1.2`,
    /// leaving headroom for noise before clipping.
    pub fn gain(&self) -> f64 {
        INTENSITY_MAX / (self.photon_scale * 1.2)
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::for_regime(Regime::High)
    }
}

/// Poisson shot noise plus Gaussian read noise, rescaled to the 16-bit
/// intensity range and clamped to `[0, 65535]`. `frame` holds intensities
/// in `[0, 1]`.
pub fn apply_noise(frame: &Tensor<f64>, noise: &NoiseConfig, seed: u64) -> Result<Tensor<f64>> {
    noise.validate()?;
    if frame.min_value() < 0.0 || frame.max_value() > 1.0 {
        return Err(Error::Contract(format!(
            "frame values must lie in [0, 1], found [{}, {}]",
            frame.min_value(),
            frame.max_value()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read = (noise.read_sigma > 0.0).then(|| Normal::new(0.0, noise.read_sigma).expect("validated sigma"));
    let gain = noise.gain();
    let mut out = frame.clone();
    for px in out.data_mut() {
        let v = *px;
        let lambda = v * noise.photon_scale;
        let shot = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(&mut rng)
        } else {
            0.0
        };
        let counts = shot + read.map_or(0.0, |d| d.sample(&mut rng));
        *px = (counts * gain).clamp(0.0, INTENSITY_MAX);
    }
    Ok(out)
}
