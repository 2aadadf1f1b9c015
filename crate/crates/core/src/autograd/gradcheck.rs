use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`;
    /// the floor keeps structurally zero gradients from reporting round-off
    /// as relative error.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, Tape<f64>, Var, Vec<Var>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let value = tape.value(root);
    if !value.shape().is_scalar() {
        return Err(Error::Contract(format!(
            "grad_check function must return a scalar, got {}",
            value.shape()
        )));
    }
    let v = value.data()[0];
    Ok((v, tape, root, vars))
}

/// Compares reverse-mode gradients of the scalar program `f` against
/// central finite differences with step `step`.
///
/// For each input, up to `samples` distinct coordinates are drawn (all of
/// them when the tensor is smaller). `seed` fixes the draw.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], samples: usize, step: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if inputs.iter().any(|t| !t.all_finite()) {
        return Err(Error::Contract("grad_check inputs must be finite".into()));
    }
    let (v0, tape, root, vars) = evaluate(&f, inputs)?;
    let (v1, ..) = evaluate(&f, inputs)?;
    if v0.to_bits() != v1.to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: two forward passes gave {v0:e} and {v1:e}"
        )));
    }
    let grads = tape.backward(root)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    for (i, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let coords: Vec<usize> = if numel <= samples {
            (0..numel).collect()
        } else {
            let mut c = sample(&mut rng, numel, samples).into_vec();
            c.sort_unstable();
            c
        };
        let analytic = grads.get(vars[i]);
        for j in coords {
            let orig = input.data()[j];
            perturbed[i].data_mut()[j] = orig + step;
            let (plus, ..) = evaluate(&f, &perturbed)?;
            perturbed[i].data_mut()[j] = orig - step;
            let (minus, ..) = evaluate(&f, &perturbed)?;
            perturbed[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.map_or(0.0, |g| g.data()[j]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if !rel.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at input {i} coordinate {j}: analytic {a}, numeric {numeric}"
                )));
            }
            report.coordinates_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
