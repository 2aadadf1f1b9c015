use super::blocks::{bandpass_attention, conv_same, kernel_select, noise_estimator};
use super::{BoundParams, ModelConfig, ModelParams};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Full forward pass from a normalized `(n, 1, h, w)` frame to the
/// `(n, 1, 2h, 2w)` reconstruction.
///
/// 1. Optional noise estimator; the stem sees `(frame, noise)` or `frame`.
/// 2. A 3x3 stem conv lifts to `nc` channels.
/// 3. Branch `b` average-pools the stem features `b - 1` times, applies
///    bandpass attention (optional) and the kernel-selection blocks,
///    upsamples bilinearly back to input resolution and projects to one
///    channel.
/// 4. The branch outputs are combined with learned scalars and the input
///    frame is added back.
/// 5. A 3x3 conv to four channels followed by depth-to-space doubles the
///    resolution.
pub fn flsn_forward<T: Real>(tape: &mut Tape<T>, p: &BoundParams, cfg: &ModelConfig, frame: Var) -> Result<Var> {
    let s = tape.shape(frame);
    if s.c != 1 {
        return Err(Error::dim(
            "flsn_forward",
            format!("expects single-channel frames, got {s}"),
        ));
    }
    cfg.check_input(s.h, s.w)?;

    let x0 = if cfg.use_noise_estimator {
        noise_estimator(tape, p, frame)?.1
    } else {
        frame
    };
    let stem = conv_same(tape, p, "stem", x0)?;

    let mut combined = frame;
    let mut scaled = stem;
    for b in 1..=cfg.branches {
        if b > 1 {
            scaled = tape.avg_downsample2(scaled)?;
        }
        let mut f = scaled;
        if cfg.use_bandpass_attention {
            f = bandpass_attention(tape, p, &format!("branch{b}.ba"), f)?;
        }
        for i in 1..=cfg.blocks_per_branch {
            f = kernel_select(tape, p, &format!("branch{b}.block{i}"), f)?;
        }
        f = tape.bilinear_upsample(f, 1 << (b - 1))?;
        let g = conv_same(tape, p, &format!("branch{b}.head"), f)?;
        let weighted = tape.scale_by(g, p.get(&format!("branch{b}.alpha"))?)?;
        combined = tape.add(combined, weighted)?;
    }

    let up = conv_same(tape, p, "upscale", combined)?;
    tape.depth_to_space(up, 2)
}

/// A configured network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Flsn<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Real> Flsn<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Flsn { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::from_named(
            &config,
            params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        )?;
        Ok(Flsn { config, params })
    }

    /// Inference without gradient bookkeeping. `frame` is normalized to
    /// `[0, 1]`.
    pub fn infer(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(frame.clone());
        let y = flsn_forward(&mut tape, &p, &self.config, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(input.n, 1, input.h * 2, input.w * 2)
    }
}
