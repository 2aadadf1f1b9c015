//! Parameter schema, initialization and binding onto a tape.
//!
//! Every learnable tensor has a dotted name. The schema for a config is,
//! in order:
//!
//! ```text
//! ne.head.{weight,bias}                       nc x 1 x 3 x 3      (noise estimator on)
//! ne.carb{1,2}.conv{1,2}.{weight,bias}        nc x nc x 3 x 3
//! ne.carb{1,2}.ca.{down,up}.{weight,bias}     nc/r x nc, nc x nc/r (1x1)
//! ne.tail.{weight,bias}                       1 x nc x 3 x 3
//! stem.{weight,bias}                          nc x (1 or 2) x 3 x 3
//! branch{b}.ba.{ll,lh,hl,hh}.ca.{down,up}.*   (bandpass attention on)
//! branch{b}.ba.{ll,lh,hl,hh}.w                1 x 1 x 1 x 1
//! branch{b}.block{i}.conv5.{weight,bias}      nc x nc/2 x 5 x 5
//! branch{b}.block{i}.conv3.{weight,bias}      nc x nc/2 x 3 x 3
//! branch{b}.block{i}.ca.{down,up}.*
//! branch{b}.head.{weight,bias}                1 x nc x 3 x 3
//! branch{b}.alpha                             1 x 1 x 1 x 1
//! upscale.{weight,bias}                       4 x 1 x 3 x 3
//! ```
//!
//! Branch, block and residual-block indices are 1-based. The Haar filters
//! are constants and never appear here.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{HaarBand, Real, Shape, Tensor};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamKind {
    /// Uniform in `(-s, s)` with `s = sqrt(1 / fan_in)`.
    Kernel {
        fan_in: usize,
    },
    Bias,
    /// A learned scalar with a fixed starting value.
    Scalar(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

struct SchemaBuilder(Vec<ParamSpec>);

impl SchemaBuilder {
    fn conv(&mut self, prefix: &str, out_c: usize, in_c: usize, k: usize) {
        self.0.push(ParamSpec {
            name: format!("{prefix}.weight"),
            shape: Shape::new(out_c, in_c, k, k),
            kind: ParamKind::Kernel { fan_in: in_c * k * k },
        });
        self.0.push(ParamSpec {
            name: format!("{prefix}.bias"),
            shape: Shape::new(1, out_c, 1, 1),
            kind: ParamKind::Bias,
        });
    }

    fn attention(&mut self, prefix: &str, cfg: &ModelConfig) {
        self.conv(&format!("{prefix}.down"), cfg.ca_hidden(), cfg.nc, 1);
        self.conv(&format!("{prefix}.up"), cfg.nc, cfg.ca_hidden(), 1);
    }

    fn scalar(&mut self, name: String, init: f64) {
        self.0.push(ParamSpec {
            name,
            shape: Shape::scalar(),
            kind: ParamKind::Scalar(init),
        });
    }
}

/// The ordered parameter list for `cfg`.
pub fn schema(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let nc = cfg.nc;
    let mut s = SchemaBuilder(Vec::new());
    if cfg.use_noise_estimator {
        s.conv("ne.head", nc, 1, 3);
        for k in 1..=2 {
            s.conv(&format!("ne.carb{k}.conv1"), nc, nc, 3);
            s.conv(&format!("ne.carb{k}.conv2"), nc, nc, 3);
            s.attention(&format!("ne.carb{k}.ca"), cfg);
        }
        s.conv("ne.tail", 1, nc, 3);
    }
    s.conv("stem", nc, cfg.stem_in_channels(), 3);
    for b in 1..=cfg.branches {
        if cfg.use_bandpass_attention {
            for band in HaarBand::ALL {
                s.attention(&format!("branch{b}.ba.{}.ca", band.name()), cfg);
            }
            for band in HaarBand::ALL {
                s.scalar(format!("branch{b}.ba.{}.w", band.name()), 1.0);
            }
        }
        for i in 1..=cfg.blocks_per_branch {
            s.conv(&format!("branch{b}.block{i}.conv5"), nc, nc / 2, 5);
            s.conv(&format!("branch{b}.block{i}.conv3"), nc, nc / 2, 3);
            s.attention(&format!("branch{b}.block{i}.ca"), cfg);
        }
        s.conv(&format!("branch{b}.head"), 1, nc, 3);
        s.scalar(format!("branch{b}.alpha"), 1.0 / cfg.branches as f64);
    }
    s.conv("upscale", 4, 1, 3);
    s.0
}

/// Named, ordered learnable tensors of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Fresh parameters for `cfg`, fully determined by `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = schema(cfg)
            .into_iter()
            .map(|spec| {
                let t = match spec.kind {
                    ParamKind::Kernel { fan_in } => {
                        let s = (1.0 / fan_in as f64).sqrt();
                        Tensor::from_fn(spec.shape, |_, _, _, _| T::from_f64(rng.gen_range(-s..s)))
                    }
                    ParamKind::Bias => Tensor::zeros(spec.shape),
                    ParamKind::Scalar(v) => Tensor::full(spec.shape, T::from_f64(v)),
                };
                (spec.name, t)
            })
            .collect();
        Ok(ModelParams { entries })
    }

    /// Assembles parameters from named tensors, checking them against the
    /// schema of `cfg` (same names, same order, same shapes).
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let specs = schema(cfg);
        if specs.len() != named.len() {
            return Err(Error::Contract(format!(
                "config expects {} parameters, got {}",
                specs.len(),
                named.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(&named) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::Contract(format!(
                    "parameter {name} ({}) does not match schema entry {} ({})",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(ModelParams {
            entries: named.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total learnable scalars.
    pub fn element_count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter on `tape`. With `trainable` false they are
    /// recorded as constants and receive no gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, va), (kb, vb))| ka == kb && va.bit_eq(vb))
    }
}

/// Tape handles for a [`ModelParams`], looked up by name.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Binds externally created vars in schema order (used by gradient
    /// checks, where the checker owns the leaves).
    pub fn from_vars(cfg: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let specs = schema(cfg);
        if specs.len() != vars.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter vars, got {}",
                specs.len(),
                vars.len()
            )));
        }
        Ok(BoundParams {
            vars: specs.into_iter().map(|s| s.name).zip(vars.iter().copied()).collect(),
        })
    }

    /// Binds an arbitrary subset of named vars, for exercising single
    /// blocks.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
