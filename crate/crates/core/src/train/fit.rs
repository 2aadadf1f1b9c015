use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::adam_step;
use super::config::{lr_at, TrainConfig};
use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{flsn_forward, Flsn, ModelConfig, ModelParams};
use crate::synth::{derive_seed, normalize, Dataset, SimSample, FRAMES_PER_SAMPLE};
use crate::tensor::Tensor;

pub const LOG_HEADER: &str = "epoch,step,lr,loss";
pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.flc";

/// File name of the checkpoint written after `epoch` completed epochs.
pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_{epoch:04}.flc")
}

/// Uniformly chosen frame index in `0..15`.
pub fn pick_frame_index(rng: &mut impl Rng) -> usize {
    rng.gen_range(0..FRAMES_PER_SAMPLE)
}

/// A uniformly chosen raw frame of `sample`, normalized to `[0, 1]`, with
/// its index.
pub fn pick_frame(sample: &SimSample, rng: &mut impl Rng) -> (usize, Tensor<f32>) {
    let i = pick_frame_index(rng);
    (i, normalize(&sample.frames[i]))
}

/// One optimizer step's loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Global optimizer step, 1-based.
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.step, r.lr, r.loss));
        }
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(format!("missing header {LOG_HEADER:?}"));
        }
        let rows = lines
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let bad = || format!("malformed log line {l:?}");
                if f.len() != 4 {
                    return Err(bad());
                }
                Ok(LogRow {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    step: f[1].parse().map_err(|_| bad())?,
                    lr: f[2].parse().map_err(|_| bad())?,
                    loss: f[3].parse().map_err(|_| bad())?,
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog { rows })
    }

    /// Mean loss of each epoch present in the log, in order.
    pub fn epoch_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some((e, sum, n)) if *e == r.epoch => {
                    *sum += r.loss;
                    *n += 1;
                }
                _ => out.push((r.epoch, r.loss, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Default)]
pub struct FitOptions<'a> {
    /// Where the log and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochSummary)>,
}

pub struct FitOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub log: TrainLog,
}

/// Forward, L1 loss and backward for one batch. Returns the loss and the
/// gradient of every parameter by name.
pub fn loss_and_grads(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    input: Tensor<f32>,
    target: Tensor<f32>,
) -> Result<(f64, IndexMap<String, Tensor<f32>>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(input);
    let y = tape.constant(target);
    let pred = flsn_forward(&mut tape, &bound, cfg, x)?;
    let loss = tape.l1_loss(pred, y)?;
    let value = tape.value(loss).data()[0] as f64;
    let mut grads = tape.backward(loss)?;
    let named = bound
        .iter()
        .filter_map(|(name, var)| grads.take(var).map(|g| (name.to_string(), g)))
        .collect();
    Ok((value, named))
}

/// Draws the `(input, target)` batch for the given sample indices: one
/// random frame per sample, cropped at a random offset, with the
/// reference cropped at twice the offset and size.
fn draw_batch(
    dataset: &Dataset,
    indices: &[usize],
    crop: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (h, w) = dataset.lr_size();
    let mut inputs = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    for &i in indices {
        let sample = &dataset.samples[i];
        let (_, frame) = pick_frame(sample, rng);
        let y0 = rng.gen_range(0..=h - crop);
        let x0 = rng.gen_range(0..=w - crop);
        inputs.push(frame.crop(y0, x0, crop, crop)?);
        targets.push(normalize(&sample.hr.crop(2 * y0, 2 * x0, 2 * crop, 2 * crop)?));
    }
    Ok((Tensor::stack_samples(&inputs)?, Tensor::stack_samples(&targets)?))
}

/// Trains from `start` (a fresh or resumed checkpoint) until `cfg.epochs`
/// epochs are complete.
///
/// Every epoch draws its shuffle, frame choices and crops from a generator
/// seeded by `(cfg.seed, epoch)`, so resuming from any epoch boundary
/// reproduces an uninterrupted run bit for bit.
pub fn fit(
    start: Checkpoint<f32>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut opts: FitOptions<'_>,
) -> Result<FitOutcome> {
    cfg.validate(&start.config)?;
    if dataset.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let (h, w) = dataset.lr_size();
    if cfg.crop_size > h || cfg.crop_size > w {
        return Err(Error::Config(format!(
            "crop_size {} exceeds the {h}x{w} training frames",
            cfg.crop_size
        )));
    }
    if start.epoch as usize > cfg.epochs {
        return Err(Error::Config(format!(
            "checkpoint is at epoch {}, beyond the configured {} epochs",
            start.epoch, cfg.epochs
        )));
    }
    let Checkpoint {
        config: model_cfg,
        mut params,
        mut optim,
        epoch: first_epoch,
    } = start;
    optim.check_matches(&params)?;

    let mut log = TrainLog::default();
    if let Some(dir) = opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        if first_epoch > 0 && path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
            log = TrainLog::parse(&text).map_err(|r| Error::load(&path, r))?;
            log.rows.retain(|r| (r.epoch as u64) < first_epoch);
        }
    }

    let write_checkpoint = |dir: &Path, name: &str, params: &ModelParams<f32>, optim, epoch: usize| {
        Checkpoint {
            config: model_cfg.clone(),
            params: params.clone(),
            optim,
            epoch: epoch as u64,
        }
        .save(dir.join(name))
    };

    for epoch in first_epoch as usize..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (input, target) = draw_batch(dataset, batch, cfg.crop_size, &mut rng)?;
            let (loss, grads) = loss_and_grads(&params, &model_cfg, input, target)?;
            let step = optim.step + 1;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at epoch {epoch}, step {step} (lr {lr}); \
                     lower the learning rate or check the data"
                )));
            }
            adam_step(&mut params, &grads, &mut optim, lr, &cfg.adam)?;
            log.rows.push(LogRow { epoch, step, lr, loss });
            total += loss;
            steps += 1;
        }
        let summary = EpochSummary {
            epoch,
            steps: optim.step,
            lr,
            mean_loss: total / steps as f64,
        };
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&summary);
        }
        if let Some(dir) = opts.out_dir {
            let path = dir.join(LOG_FILE);
            fs::write(&path, log.to_csv()).map_err(|e| Error::io(&path, e))?;
            let done = epoch + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                write_checkpoint(dir, &checkpoint_name(done), &params, optim.clone(), done)?;
            }
        }
    }

    let checkpoint = Checkpoint {
        config: model_cfg,
        params,
        optim,
        epoch: cfg.epochs as u64,
    };
    if let Some(dir) = opts.out_dir {
        let path = dir.join(LOG_FILE);
        fs::write(&path, log.to_csv()).map_err(|e| Error::io(&path, e))?;
        checkpoint.save(dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(FitOutcome { checkpoint, log })
}

/// Mean L1 between the model output and the normalized reference over every
/// frame of every sample, on full frames.
pub fn dataset_l1(model: &Flsn<f32>, dataset: &Dataset) -> Result<f64> {
    let per_sample: Vec<f64> = dataset
        .samples
        .par_iter()
        .map(|s| {
            let target = normalize(&s.hr);
            let mut acc = 0.0;
            for f in &s.frames {
                let pred = model.infer(&normalize(f))?;
                let sum: f64 = pred
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| (a as f64 - b as f64).abs())
                    .sum();
                acc += sum / pred.numel() as f64;
            }
            Ok(acc / s.frames.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per_sample.iter().sum::<f64>() / per_sample.len() as f64)
}
