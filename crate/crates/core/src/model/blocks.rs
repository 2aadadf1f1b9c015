//! Building blocks of the network, expressed as tape programs.
//!
//! Each function reads its parameters from a [`BoundParams`] under a name
//! prefix (see [`super::params`] for the schema).

use super::BoundParams;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, HaarBand, Real};

/// Instance-norm epsilon inside the noise estimator.
pub const NORM_EPS: f64 = 1e-5;

/// Biased "same" conv with odd square kernel read from `{prefix}.weight`.
pub fn conv_same<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let k = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let size = tape.shape(k).h;
    tape.conv2d(x, k, Some(b), ConvGeometry::same(size))
}

/// Squeeze-and-excitation weights `sigmoid(up(relu(down(pool(x)))))`,
/// shape `(n, c, 1, 1)` with values in `(0, 1)`.
pub fn channel_attention<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let expected = tape.shape(p.get(&format!("{prefix}.down.weight"))?).c;
    let got = tape.shape(x).c;
    if got != expected {
        return Err(Error::dim(
            "channel_attention",
            format!("{prefix} expects {expected} channels, input has {got}"),
        ));
    }
    let squeezed = tape.global_avg_pool(x)?;
    let down = conv_same(tape, p, &format!("{prefix}.down"), squeezed)?;
    let act = tape.relu(down);
    let up = conv_same(tape, p, &format!("{prefix}.up"), act)?;
    Ok(tape.sigmoid(up))
}

/// Channel-attention residual: `x + x * a`. Returns the output and the
/// attention vector `a`.
pub fn ca_block<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<(Var, Var)> {
    let a = channel_attention(tape, p, prefix, x)?;
    let reweighted = tape.mul(x, a)?;
    Ok((tape.add(x, reweighted)?, a))
}

/// Kernel-selection basic block.
///
/// The lower half of the channels goes through a 5x5 conv and the upper
/// half through a 3x3 conv, both back to `nc` channels. Attention over
/// their sum picks, per channel, a convex mix `b5 * w + b3 * (1 - w)`.
pub fn kernel_select<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, feat: Var) -> Result<Var> {
    let nc = tape.shape(feat).c;
    if !nc.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "kernel selection needs an even channel count, got {nc}"
        )));
    }
    let lo = tape.channel_slice(feat, 0, nc / 2)?;
    let hi = tape.channel_slice(feat, nc / 2, nc)?;
    let b5 = conv_same(tape, p, &format!("{prefix}.conv5"), lo)?;
    let b3 = conv_same(tape, p, &format!("{prefix}.conv3"), hi)?;
    let fused = tape.add(b5, b3)?;
    let w = channel_attention(tape, p, &format!("{prefix}.ca"), fused)?;
    let neg = tape.scale(w, -1.0);
    let one_minus_w = tape.add_scalar(neg, 1.0);
    let left = tape.mul(b5, w)?;
    let right = tape.mul(b3, one_minus_w)?;
    tape.add(left, right)
}

/// `x + CA(IN(conv2(relu(IN(conv1(x))))))`-style residual block with
/// instance normalization.
fn norm_residual_block<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let h = conv_same(tape, p, &format!("{prefix}.conv1"), x)?;
    let h = tape.instance_norm(h, NORM_EPS)?;
    let h = tape.relu(h);
    let h = conv_same(tape, p, &format!("{prefix}.conv2"), h)?;
    let h = tape.instance_norm(h, NORM_EPS)?;
    let a = channel_attention(tape, p, &format!("{prefix}.ca"), h)?;
    let h = tape.mul(h, a)?;
    tape.add(x, h)
}

/// Blind noise estimator. Returns the single-channel noise map and the
/// two-channel `(frame, noise)` stack fed to the stem.
pub fn noise_estimator<T: Real>(tape: &mut Tape<T>, p: &BoundParams, frame: Var) -> Result<(Var, Var)> {
    let s = tape.shape(frame);
    if s.c != 1 {
        return Err(Error::dim(
            "noise_estimator",
            format!("expects a single-channel frame, got {s}"),
        ));
    }
    let mut h = conv_same(tape, p, "ne.head", frame)?;
    for k in 1..=2 {
        h = norm_residual_block(tape, p, &format!("ne.carb{k}"), h)?;
    }
    let noise = conv_same(tape, p, "ne.tail", h)?;
    let cat = tape.channel_concat(frame, noise)?;
    Ok((noise, cat))
}

/// Haar analysis into `[LL, LH, HL, HH]`, each at half resolution.
pub fn haar_analysis<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<[Var; 4]> {
    let mut out = [x; 4];
    for (slot, band) in out.iter_mut().zip(HaarBand::ALL) {
        *slot = tape.haar_analysis(x, band)?;
    }
    Ok(out)
}

/// Inverse of [`haar_analysis`]: sum of the four transposed band filters.
pub fn haar_synthesis<T: Real>(tape: &mut Tape<T>, bands: [Var; 4]) -> Result<Var> {
    let shape = tape.shape(bands[0]);
    if let Some(bad) = bands.iter().find(|b| tape.shape(**b) != shape) {
        return Err(Error::dim(
            "haar_synthesis",
            format!("band shapes {} and {} differ", shape, tape.shape(*bad)),
        ));
    }
    let mut acc = tape.haar_synthesis(bands[0], HaarBand::ALL[0]);
    for (&b, band) in bands.iter().zip(HaarBand::ALL).skip(1) {
        let s = tape.haar_synthesis(b, band);
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

/// Bandpass attention with a caller-supplied per-band transform.
///
/// Each band is analyzed, passed through `carb(tape, params, band_prefix,
/// band)`, synthesized back and scaled by its learned weight
/// `{prefix}.{band}.w`; the four results and `x` are summed.
pub fn bandpass_attention_with<T, F>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    mut carb: F,
) -> Result<Var>
where
    T: Real,
    F: FnMut(&mut Tape<T>, &BoundParams, &str, Var) -> Result<Var>,
{
    let mut out = x;
    for band in HaarBand::ALL {
        let band_prefix = format!("{prefix}.{}", band.name());
        let coeffs = tape.haar_analysis(x, band)?;
        let refined = carb(tape, p, &band_prefix, coeffs)?;
        let back = tape.haar_synthesis(refined, band);
        let weighted = tape.scale_by(back, p.get(&format!("{band_prefix}.w"))?)?;
        out = tape.add(out, weighted)?;
    }
    Ok(out)
}

/// Bandpass attention with a channel-attention residual block per band.
pub fn bandpass_attention<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    bandpass_attention_with(tape, p, prefix, x, |tape, p, band_prefix, v| {
        Ok(ca_block(tape, p, &format!("{band_prefix}.ca"), v)?.0)
    })
}
