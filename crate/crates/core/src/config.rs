//! Run configuration: every tunable of a pipeline run in one
//! line-oriented text file.
//!
//! ```text
//! # comment
//! [model]
//! nc = 32
//! [train]
//! lr0 = 1e-4
//! ```
//!
//! Sections are `model`, `train`, `optics`, `noise` and `data`. Every key
//! has a default; unknown sections or keys are errors.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synth::{DatasetSpec, NoiseConfig, OpticsConfig, Regime, Split, Style};
use crate::train::{parse_real, TrainConfig};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

/// Camera noise settings; `photon_scale` defaults to the regime's value.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSection {
    pub regime: Regime,
    pub photon_scale: Option<f64>,
    pub read_sigma: f64,
}

impl NoiseSection {
    pub fn resolve(&self, regime: Regime) -> NoiseConfig {
        let base = NoiseConfig::for_regime(regime);
        NoiseConfig {
            photon_scale: self.photon_scale.unwrap_or(base.photon_scale),
            read_sigma: self.read_sigma,
            ..base
        }
    }
}

/// Dataset geometry and seeding.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub train_samples: usize,
    pub test_samples: usize,
    /// Side of the square low-resolution frames.
    pub lr_size: usize,
    pub style: Style,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub optics: OpticsConfig,
    pub noise: NoiseSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let noise = NoiseConfig::default();
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            optics: OpticsConfig::default(),
            noise: NoiseSection {
                regime: noise.regime,
                photon_scale: None,
                read_sigma: noise.read_sigma,
            },
            data: DataSection {
                train_samples: 64,
                test_samples: 16,
                lr_size: 64,
                style: Style::Filaments,
                seed: 0,
            },
        }
    }
}

fn real(key: &str, v: &str) -> Result<f64> {
    parse_real(v).ok_or_else(|| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

fn int<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| real(key, x.trim())).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies `section.key = value`.
    pub fn set(&mut self, dotted: &str, value: &str) -> Result<()> {
        let (section, key) = dotted
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("expected section.key, got {dotted:?}")))?;
        let value = value.trim();
        match section {
            "model" => self.model.set(key, value),
            "train" => self.train.set(key, value),
            "optics" => {
                let o = &mut self.optics;
                match key {
                    "psf_sigma_lr" => o.psf_sigma_lr = real(dotted, value)?,
                    "pattern_freq" => o.pattern_freq = real(dotted, value)?,
                    "modulation" => o.modulation = real(dotted, value)?,
                    "angles" => o.angles = list(dotted, value)?,
                    "phases" => o.phases = list(dotted, value)?,
                    _ => return Err(Error::Config(format!("unknown optics key {key:?}"))),
                }
                Ok(())
            }
            "noise" => {
                let n = &mut self.noise;
                match key {
                    "regime" => n.regime = value.parse()?,
                    "photon_scale" => {
                        n.photon_scale = if value == "auto" {
                            None
                        } else {
                            Some(real(dotted, value)?)
                        }
                    }
                    "read_sigma" => n.read_sigma = real(dotted, value)?,
                    _ => return Err(Error::Config(format!("unknown noise key {key:?}"))),
                }
                Ok(())
            }
            "data" => {
                let d = &mut self.data;
                match key {
                    "train_samples" => d.train_samples = int(dotted, value)?,
                    "test_samples" => d.test_samples = int(dotted, value)?,
                    "lr_size" => d.lr_size = int(dotted, value)?,
                    "style" => d.style = value.parse()?,
                    "seed" => d.seed = int(dotted, value)?,
                    _ => return Err(Error::Config(format!("unknown data key {key:?}"))),
                }
                Ok(())
            }
            _ => Err(Error::Config(format!("unknown config section {section:?}"))),
        }
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| Error::Config(format!("line {}: {e}", i + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(Error::Config(format!("expected key = value, got {line:?}"))))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| at(Error::Config(format!("key {:?} outside any [section]", k.trim()))))?;
            cfg.set(&format!("{sec}.{}", k.trim()), v).map_err(at)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The fully resolved configuration in the file format; parsing it
    /// yields `self` again.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = |name: &str, kv: Vec<(&str, String)>| {
            s.push_str(&format!("[{name}]\n"));
            for (k, v) in kv {
                s.push_str(&format!("{k} = {v}\n"));
            }
            s.push('\n');
        };
        section("model", self.model.to_kv());
        section("train", self.train.to_kv());
        let o = &self.optics;
        section(
            "optics",
            vec![
                ("psf_sigma_lr", o.psf_sigma_lr.to_string()),
                ("pattern_freq", o.pattern_freq.to_string()),
                ("modulation", o.modulation.to_string()),
                ("angles", join(&o.angles)),
                ("phases", join(&o.phases)),
            ],
        );
        let n = &self.noise;
        section(
            "noise",
            vec![
                ("regime", n.regime.to_string()),
                ("photon_scale", n.photon_scale.map_or("auto".into(), |v| v.to_string())),
                ("read_sigma", n.read_sigma.to_string()),
            ],
        );
        let d = &self.data;
        section(
            "data",
            vec![
                ("train_samples", d.train_samples.to_string()),
                ("test_samples", d.test_samples.to_string()),
                ("lr_size", d.lr_size.to_string()),
                ("style", d.style.to_string()),
                ("seed", d.seed.to_string()),
            ],
        );
        s.pop();
        s
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn dataset_spec(&self, split: Split, regime: Regime) -> DatasetSpec {
        DatasetSpec {
            samples: match split {
                Split::Train => self.data.train_samples,
                Split::Test => self.data.test_samples,
            },
            split,
            lr_height: self.data.lr_size,
            lr_width: self.data.lr_size,
            style: self.data.style,
            optics: self.optics.clone(),
            noise: self.noise.resolve(regime),
            seed: self.data.seed,
        }
    }
}
