use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Adam moment decay rates and denominator guard.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimization recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub adam: AdamParams,
    pub seed: u64,
    /// Side of the square low-resolution training crop.
    pub crop_size: usize,
    /// Write a numbered checkpoint every this many epochs; 0 disables them
    /// (the final checkpoint is always written).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            lr0: 1e-4,
            lr_decay_factor: 1.0 / 12.0,
            lr_decay_every: 20,
            epochs: 70,
            adam: AdamParams::default(),
            seed: 0,
            crop_size: 64,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor {} must lie in (0, 1]",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps.is_nan() || a.eps <= 0.0 {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1) and eps be positive, got {}, {}, {}",
                a.beta1, a.beta2, a.eps
            )));
        }
        let d = model.spatial_divisor();
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "crop_size {} must be a positive multiple of 2^B = {d} (branches = {}); \
                 pick e.g. {} or reduce branches",
                self.crop_size,
                model.branches,
                d * (self.crop_size / d).max(1)
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("lr0", self.lr0.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("lr_decay_every", self.lr_decay_every.to_string()),
            ("epochs", self.epochs.to_string()),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("crop_size", self.crop_size.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("train.{key}: expected an integer, got {v:?}")))
        };
        let real =
            |v: &str| parse_real(v).ok_or_else(|| Error::Config(format!("train.{key}: expected a number, got {v:?}")));
        match key {
            "batch_size" => self.batch_size = int(value)?,
            "lr0" => self.lr0 = real(value)?,
            "lr_decay_factor" => self.lr_decay_factor = real(value)?,
            "lr_decay_every" => self.lr_decay_every = int(value)?,
            "epochs" => self.epochs = int(value)?,
            "adam_beta1" => self.adam.beta1 = real(value)?,
            "adam_beta2" => self.adam.beta2 = real(value)?,
            "adam_eps" => self.adam.eps = real(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("train.seed: expected an integer, got {value:?}")))?
            }
            "crop_size" => self.crop_size = int(value)?,
            "checkpoint_every" => self.checkpoint_every = int(value)?,
            _ => return Err(Error::Config(format!("unknown train key {key:?}"))),
        }
        Ok(())
    }
}

/// Parses a decimal number, also accepting a simple ratio such as `1/12`.
pub fn parse_real(v: &str) -> Option<f64> {
    if let Some((a, b)) = v.split_once('/') {
        let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return Some(a / b);
    }
    v.trim().parse().ok()
}

/// Learning rate in effect during `epoch` (0-based): `lr0` scaled by the
/// decay factor once per completed `lr_decay_every` epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
}
