//! `FLC1` checkpoints: model configuration, parameters, optimizer state and
//! epoch counter in one file.
//!
//! ```text
//! "FLC1"
//! u32 len, UTF-8 text      "version=1\n" then "model.<key>=<value>\n" lines
//! u32 count                then per parameter: u32 len, UTF-8 name, FLT1 tensor
//! u64 adam step
//! u32 count                then per parameter: u32 len, UTF-8 name, FLT1 m, FLT1 v
//! u64 epoch                completed epochs
//! ```
//!
//! Integers are little-endian.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{Flsn, ModelConfig, ModelParams};
use crate::tensor::{read_flt1, write_flt1, Real, Tensor};
use crate::train::OptimState;

pub const FLC1_MAGIC: &[u8; 4] = b"FLC1";
pub const FLC1_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    pub optim: OptimState<T>,
    pub epoch: u64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format!("truncated while reading {what} at byte {}", self.pos));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> std::result::Result<String, String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| format!("{what} is not UTF-8"))
    }

    fn tensor<T: Real>(&mut self, what: &str) -> std::result::Result<Tensor<T>, String> {
        let (t, used) = read_flt1(&self.bytes[self.pos..]).map_err(|e| format!("{what}: {e}"))?;
        self.pos += used;
        Ok(t)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn config_text(cfg: &ModelConfig) -> String {
    let mut s = format!("version={FLC1_VERSION}\n");
    for (k, v) in cfg.to_kv() {
        s.push_str(&format!("model.{k}={v}\n"));
    }
    s
}

fn parse_config(text: &str) -> std::result::Result<ModelConfig, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l == format!("version={FLC1_VERSION}") => {}
        other => return Err(format!("unsupported config block version line {other:?}")),
    }
    let mut cfg = ModelConfig::default();
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("malformed config line {line:?}"))?;
        let key = k
            .strip_prefix("model.")
            .ok_or_else(|| format!("unexpected config key {k:?}"))?;
        cfg.set(key, v).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

impl<T: Real> Checkpoint<T> {
    /// A checkpoint of an untrained model: zero moments, epoch 0.
    pub fn fresh(model: Flsn<T>) -> Self {
        let optim = OptimState::new(&model.params);
        Checkpoint {
            config: model.config,
            params: model.params,
            optim,
            epoch: 0,
        }
    }

    pub fn model(&self) -> Result<Flsn<T>> {
        Flsn::from_params(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FLC1_MAGIC);
        put_str(&mut out, &config_text(&self.config));
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            write_flt1(t, &mut out);
        }
        out.extend_from_slice(&self.optim.step.to_le_bytes());
        out.extend_from_slice(&(self.optim.m.len() as u32).to_le_bytes());
        for (name, m) in &self.optim.m {
            put_str(&mut out, name);
            write_flt1(m, &mut out);
            write_flt1(&self.optim.v[name], &mut out);
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != FLC1_MAGIC {
            return Err("not an FLC1 checkpoint (bad magic)".into());
        }
        let config = parse_config(&r.string("config block")?)?;
        let count = r.u32("parameter count")?;
        let mut named = Vec::with_capacity(count as usize);
        for i in 0..count {
            let name = r.string(&format!("parameter {i} name"))?;
            let t = r.tensor(&name)?;
            named.push((name, t));
        }
        let params = ModelParams::from_named(&config, named).map_err(|e| e.to_string())?;
        let step = r.u64("optimizer step")?;
        let count = r.u32("moment count")?;
        let (mut m, mut v) = (IndexMap::new(), IndexMap::new());
        for i in 0..count {
            let name = r.string(&format!("moment {i} name"))?;
            m.insert(name.clone(), r.tensor(&format!("{name} first moment"))?);
            v.insert(name.clone(), r.tensor(&format!("{name} second moment"))?);
        }
        let optim = OptimState { step, m, v };
        optim.check_matches(&params).map_err(|e| e.to_string())?;
        let epoch = r.u64("epoch")?;
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            config,
            params,
            optim,
            epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::load(path, reason))
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.epoch == other.epoch
            && self.params.bit_eq(&other.params)
            && self.optim.bit_eq(&other.optim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{adam_step, AdamParams};

    fn stepped() -> Checkpoint<f32> {
        let cfg = ModelConfig {
            use_bandpass_attention: false,
            ..ModelConfig::tiny()
        };
        let mut ck = Checkpoint::fresh(Flsn::<f32>::new(cfg, 4).unwrap());
        let grads = ck
            .params
            .iter()
            .map(|(k, t)| (k.to_string(), t.map(|v| v * 0.5 + 0.1)))
            .collect();
        adam_step(&mut ck.params, &grads, &mut ck.optim, 1e-3, &AdamParams::default()).unwrap();
        ck.epoch = 3;
        ck
    }

    #[test]
    fn byte_exact_round_trip() {
        let ck = stepped();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert!(back.bit_eq(&ck));
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("a.flc");
        let ck = stepped();
        ck.save(&path).unwrap();
        assert!(Checkpoint::<f32>::load(&path).unwrap().bit_eq(&ck));

        let mut bytes = ck.to_bytes();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        let msg = Checkpoint::<f32>::load(&path).unwrap_err().to_string();
        assert!(msg.contains("a.flc") && msg.contains("truncated"), "{msg}");

        let missing = Checkpoint::<f32>::load(tmp.path().join("nope.flc"))
            .unwrap_err()
            .to_string();
        assert!(missing.contains("nope.flc"), "{missing}");
    }

    #[test]
    fn config_block_is_versioned_text() {
        let text = config_text(&ModelConfig::tiny());
        assert!(text.starts_with("version=1\nmodel.nc=4\n"));
        assert_eq!(parse_config(&text).unwrap(), ModelConfig::tiny());
        assert!(parse_config("version=2\n").is_err());
    }
}
