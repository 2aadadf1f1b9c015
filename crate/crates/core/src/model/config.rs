use crate::error::{Error, Result};

/// Architecture hyperparameters. Two configs that compare equal produce
/// identical parameter schemas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature channels in every branch; must be even for the kernel
    /// selection half-split.
    pub nc: usize,
    /// Number of resolution branches. Branch `b` (1-based) runs at
    /// `1 / 2^(b-1)` of the input resolution.
    pub branches: usize,
    pub blocks_per_branch: usize,
    pub use_noise_estimator: bool,
    pub use_bandpass_attention: bool,
    /// Bottleneck divisor of the channel-attention 1x1 convs.
    pub ca_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nc: 32,
            branches: 4,
            blocks_per_branch: 3,
            use_noise_estimator: true,
            use_bandpass_attention: true,
            ca_reduction: 4,
        }
    }
}

impl ModelConfig {
    /// The small configuration used by the end-to-end gradient check.
    pub fn tiny() -> Self {
        ModelConfig {
            nc: 4,
            branches: 2,
            blocks_per_branch: 1,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc < 2 || !self.nc.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "nc must be even and at least 2, got {}",
                self.nc
            )));
        }
        if self.branches == 0 {
            return Err(Error::Config("branches must be at least 1".into()));
        }
        if self.branches > 16 {
            return Err(Error::Config(format!(
                "branches = {} is unreasonably deep",
                self.branches
            )));
        }
        if self.blocks_per_branch == 0 {
            return Err(Error::Config("blocks_per_branch must be at least 1".into()));
        }
        if self.ca_reduction == 0 || self.ca_reduction > self.nc {
            return Err(Error::Config(format!(
                "ca_reduction must lie in [1, nc = {}], got {}",
                self.nc, self.ca_reduction
            )));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.branches
    }

    /// Channels entering the stem conv: the frame, plus the noise map when
    /// the estimator is on.
    pub fn stem_in_channels(&self) -> usize {
        if self.use_noise_estimator {
            2
        } else {
            1
        }
    }

    pub fn ca_hidden(&self) -> usize {
        self.nc / self.ca_reduction
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.spatial_divisor();
        if h == 0 || w == 0 || !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(Error::geometry(
                "flsn_forward",
                format!(
                    "input {h}x{w} must have both dims divisible by 2^B = {d} (B = {} branches)",
                    self.branches
                ),
            ));
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("nc", self.nc.to_string()),
            ("branches", self.branches.to_string()),
            ("blocks_per_branch", self.blocks_per_branch.to_string()),
            ("noise_estimator", self.use_noise_estimator.to_string()),
            ("bandpass_attention", self.use_bandpass_attention.to_string()),
            ("ca_reduction", self.ca_reduction.to_string()),
        ]
    }

    /// Applies one `key=value` pair produced by [`ModelConfig::to_kv`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("model.{key}: expected an integer, got {v:?}")))
        };
        let boolean = |v: &str| match v {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            _ => Err(Error::Config(format!("model.{key}: expected a boolean, got {v:?}"))),
        };
        match key {
            "nc" => self.nc = int(value)?,
            "branches" => self.branches = int(value)?,
            "blocks_per_branch" => self.blocks_per_branch = int(value)?,
            "noise_estimator" => self.use_noise_estimator = boolean(value)?,
            "bandpass_attention" => self.use_bandpass_attention = boolean(value)?,
            "ca_reduction" => self.ca_reduction = int(value)?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn odd_nc_rejected() {
        let c = ModelConfig {
            nc: 5,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn divisibility_message_names_requirement() {
        let msg = ModelConfig::default().check_input(50, 50).unwrap_err().to_string();
        assert!(msg.contains("2^B = 16"), "{msg}");
        ModelConfig::default().check_input(64, 32).unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let c = ModelConfig {
            nc: 8,
            use_noise_estimator: false,
            ..ModelConfig::tiny()
        };
        let mut d = ModelConfig::default();
        for (k, v) in c.to_kv() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
        assert!(d.set("width", "3").is_err());
    }
}
