//! Gradient checks of every differentiable tape op, each network block and
//! the whole network, in 64-bit arithmetic.
//!
//! Non-scalar outputs are reduced with a fixed random weighting
//! `sum(y * r)` so every output element contributes a distinct gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check, GradCheckReport, Tape, Var};
use crate::error::Result;
use crate::model::{
    bandpass_attention, ca_block, flsn_forward, kernel_select, noise_estimator, BoundParams, ModelConfig, ModelParams,
};
use crate::synth::derive_seed;
use crate::tensor::{ConvGeometry, HaarBand, Shape, Tensor};

pub const GRADCHECK_TOL: f64 = 1e-3;
pub const GRADCHECK_SAMPLES: usize = 50;
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passes(GRADCHECK_TOL)
    }
}

/// Setup of the whole-network check.
#[derive(Clone, Debug, PartialEq)]
pub struct EndToEnd {
    pub model: ModelConfig,
    pub height: usize,
    pub width: usize,
}

impl Default for EndToEnd {
    fn default() -> Self {
        EndToEnd {
            model: ModelConfig::tiny(),
            height: 16,
            width: 16,
        }
    }
}

fn uniform(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values in `±[0.1, 1]`, away from the kinks of relu and abs.
fn off_zero(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(y * r)` with a fixed random `r`.
fn weighted(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = t.constant(uniform(t.shape(y), -1.0, 1.0, seed));
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

/// Init-time parameters with every entry nudged, so no bias sits exactly
/// at zero.
fn generic_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<f64>> {
    let mut p = ModelParams::<f64>::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
    Ok(p)
}

/// Parameters whose names start with `prefix`, as grad-check inputs.
fn subset(p: &ModelParams<f64>, prefix: &str) -> (Vec<String>, Vec<Tensor<f64>>) {
    p.iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(k, t)| (k.to_string(), t.clone()))
        .unzip()
}

fn bind(names: &[String], vars: &[Var]) -> BoundParams {
    BoundParams::from_pairs(names.iter().cloned().zip(vars.iter().copied()))
}

type Program = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

struct Case {
    name: String,
    inputs: Vec<Tensor<f64>>,
    program: Program,
}

fn case(name: impl Into<String>, inputs: Vec<Tensor<f64>>, program: Program) -> Case {
    Case {
        name: name.into(),
        inputs,
        program,
    }
}

fn op_cases() -> Vec<Case> {
    let s = |n, c, h, w| Shape::new(n, c, h, w);
    let mut cases = vec![
        case(
            "conv2d",
            vec![
                uniform(s(2, 3, 7, 6), -1.0, 1.0, 1),
                uniform(s(4, 3, 3, 3), -1.0, 1.0, 2),
                uniform(s(1, 4, 1, 1), -1.0, 1.0, 3),
            ],
            Box::new(|t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), ConvGeometry::same(3))?;
                weighted(t, y, 10)
            }),
        ),
        case(
            "conv2d_strided",
            vec![
                uniform(s(1, 2, 8, 8), -1.0, 1.0, 4),
                uniform(s(3, 2, 5, 5), -1.0, 1.0, 5),
            ],
            Box::new(|t, v| {
                let y = t.conv2d(v[0], v[1], None, ConvGeometry::new(2, 1))?;
                weighted(t, y, 11)
            }),
        ),
        case(
            "conv2d_transposed",
            vec![
                uniform(s(2, 3, 4, 5), -1.0, 1.0, 6),
                uniform(s(3, 2, 3, 3), -1.0, 1.0, 7),
            ],
            Box::new(|t, v| {
                let y = t.conv2d_transposed(v[0], v[1], 2)?;
                weighted(t, y, 12)
            }),
        ),
        case(
            "global_avg_pool",
            vec![uniform(s(2, 3, 4, 4), -1.0, 1.0, 8)],
            Box::new(|t, v| {
                let y = t.global_avg_pool(v[0])?;
                weighted(t, y, 13)
            }),
        ),
        case(
            "instance_norm",
            vec![uniform(s(2, 3, 5, 4), -1.0, 1.0, 9)],
            Box::new(|t, v| {
                let y = t.instance_norm(v[0], 1e-5)?;
                weighted(t, y, 14)
            }),
        ),
        case(
            "relu",
            vec![off_zero(s(1, 2, 5, 5), 15)],
            Box::new(|t, v| {
                let y = t.relu(v[0]);
                weighted(t, y, 16)
            }),
        ),
        case(
            "sigmoid",
            vec![uniform(s(1, 2, 5, 5), -4.0, 4.0, 17)],
            Box::new(|t, v| {
                let y = t.sigmoid(v[0]);
                weighted(t, y, 18)
            }),
        ),
        case(
            "scale_and_add_scalar",
            vec![uniform(s(1, 2, 3, 3), -1.0, 1.0, 19)],
            Box::new(|t, v| {
                let y = t.scale(v[0], -1.7);
                let y = t.add_scalar(y, 0.3);
                weighted(t, y, 20)
            }),
        ),
        case(
            "add_sub",
            vec![
                uniform(s(2, 2, 3, 3), -1.0, 1.0, 21),
                uniform(s(2, 2, 3, 3), -1.0, 1.0, 22),
                uniform(s(2, 2, 1, 1), -1.0, 1.0, 23),
            ],
            Box::new(|t, v| {
                let y = t.add(v[0], v[1])?;
                let y = t.sub(y, v[2])?;
                weighted(t, y, 24)
            }),
        ),
        case(
            "mul",
            vec![
                uniform(s(2, 2, 3, 3), -1.0, 1.0, 25),
                uniform(s(2, 2, 3, 3), -1.0, 1.0, 26),
                uniform(s(2, 2, 1, 1), -1.0, 1.0, 27),
            ],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[1])?;
                let y = t.mul(y, v[2])?;
                weighted(t, y, 28)
            }),
        ),
        case(
            "scale_by",
            vec![
                uniform(s(1, 2, 4, 4), -1.0, 1.0, 29),
                uniform(Shape::scalar(), -1.0, 1.0, 30),
            ],
            Box::new(|t, v| {
                let y = t.scale_by(v[0], v[1])?;
                weighted(t, y, 31)
            }),
        ),
        case(
            "channel_concat_slice",
            vec![
                uniform(s(2, 2, 3, 3), -1.0, 1.0, 32),
                uniform(s(2, 3, 3, 3), -1.0, 1.0, 33),
            ],
            Box::new(|t, v| {
                let y = t.channel_concat(v[0], v[1])?;
                let y = t.channel_slice(y, 1, 4)?;
                weighted(t, y, 34)
            }),
        ),
        case(
            "avg_downsample2",
            vec![uniform(s(1, 2, 6, 8), -1.0, 1.0, 35)],
            Box::new(|t, v| {
                let y = t.avg_downsample2(v[0])?;
                weighted(t, y, 36)
            }),
        ),
        case(
            "bilinear_upsample",
            vec![uniform(s(1, 2, 3, 4), -1.0, 1.0, 37)],
            Box::new(|t, v| {
                let y = t.bilinear_upsample(v[0], 4)?;
                weighted(t, y, 38)
            }),
        ),
        case(
            "depth_to_space",
            vec![uniform(s(1, 8, 3, 3), -1.0, 1.0, 39)],
            Box::new(|t, v| {
                let y = t.depth_to_space(v[0], 2)?;
                weighted(t, y, 40)
            }),
        ),
        case(
            "sum_mean",
            vec![uniform(s(1, 2, 3, 3), -1.0, 1.0, 41)],
            Box::new(|t, v| {
                let sq = t.mul(v[0], v[0])?;
                let a = t.sum(sq);
                let b = t.mean(v[0]);
                let b = t.scale(b, 3.0);
                t.add(a, b)
            }),
        ),
        case(
            "l1_loss",
            vec![off_zero(s(2, 1, 4, 4), 42), Tensor::zeros(s(2, 1, 4, 4))],
            Box::new(|t, v| t.l1_loss(v[0], v[1])),
        ),
    ];
    for (i, band) in HaarBand::ALL.into_iter().enumerate() {
        let seed = 50 + 3 * i as u64;
        cases.push(case(
            format!("haar_analysis_{}", band.name()),
            vec![uniform(s(1, 2, 6, 4), -1.0, 1.0, seed)],
            Box::new(move |t, v| {
                let y = t.haar_analysis(v[0], band)?;
                weighted(t, y, seed + 1)
            }),
        ));
        cases.push(case(
            format!("haar_synthesis_{}", band.name()),
            vec![uniform(s(1, 2, 3, 2), -1.0, 1.0, seed + 2)],
            Box::new(move |t, v| {
                let y = t.haar_synthesis(v[0], band);
                weighted(t, y, seed + 3)
            }),
        ));
    }
    cases
}

fn block_cases(seed: u64) -> Result<Vec<Case>> {
    let cfg = ModelConfig::tiny();
    let p = generic_params(&cfg, seed)?;
    let mut cases = Vec::new();

    let (names, mut inputs) = subset(&p, "branch1.block1.ca.");
    inputs.insert(0, uniform(Shape::new(1, 4, 8, 8), -1.0, 1.0, 100));
    cases.push(case(
        "ca_block",
        inputs,
        Box::new(move |t, v| {
            let prefix = "branch1.block1.ca";
            let (y, _) = ca_block(t, &bind(&names, &v[1..]), prefix, v[0])?;
            weighted(t, y, 101)
        }),
    ));

    let (names, mut inputs) = subset(&p, "branch1.block1.");
    inputs.insert(0, uniform(Shape::new(1, 4, 8, 8), -1.0, 1.0, 102));
    cases.push(case(
        "kernel_select",
        inputs,
        Box::new(move |t, v| {
            let y = kernel_select(t, &bind(&names, &v[1..]), "branch1.block1", v[0])?;
            weighted(t, y, 103)
        }),
    ));

    let (names, mut inputs) = subset(&p, "ne.");
    inputs.insert(0, uniform(Shape::new(1, 1, 12, 12), 0.0, 1.0, 104));
    cases.push(case(
        "noise_estimator",
        inputs,
        Box::new(move |t, v| {
            let (_, cat) = noise_estimator(t, &bind(&names, &v[1..]), v[0])?;
            weighted(t, cat, 105)
        }),
    ));

    let (names, mut inputs) = subset(&p, "branch1.ba.");
    inputs.insert(0, uniform(Shape::new(1, 4, 8, 8), -1.0, 1.0, 106));
    cases.push(case(
        "bandpass_attention",
        inputs,
        Box::new(move |t, v| {
            let y = bandpass_attention(t, &bind(&names, &v[1..]), "branch1.ba", v[0])?;
            weighted(t, y, 107)
        }),
    ));
    Ok(cases)
}

fn end_to_end_case(setup: &EndToEnd, seed: u64) -> Result<Case> {
    let cfg = setup.model.clone();
    cfg.check_input(setup.height, setup.width)?;
    let p = generic_params(&cfg, seed)?;
    let (names, mut inputs) = subset(&p, "");
    inputs.insert(0, uniform(Shape::new(1, 1, setup.height, setup.width), 0.0, 1.0, 200));
    Ok(case(
        format!(
            "flsn_end_to_end(nc={}, B={}, {}x{})",
            cfg.nc, cfg.branches, setup.height, setup.width
        ),
        inputs,
        Box::new(move |t, v| {
            let y = flsn_forward(t, &bind(&names, &v[1..]), &cfg, v[0])?;
            weighted(t, y, 201)
        }),
    ))
}

fn run(c: Case, seed: u64) -> Result<CheckResult> {
    let report = grad_check(&c.program, &c.inputs, GRADCHECK_SAMPLES, GRADCHECK_STEP, seed)?;
    Ok(CheckResult { name: c.name, report })
}

/// Every op, block and the whole network. Results come back in a fixed
/// order: ops, blocks, end-to-end last.
pub fn gradcheck_suite(setup: &EndToEnd, seed: u64) -> Result<Vec<CheckResult>> {
    use rayon::prelude::*;
    let mut cases = op_cases();
    cases.extend(block_cases(seed)?);
    cases.push(end_to_end_case(setup, seed)?);
    cases
        .into_par_iter()
        .enumerate()
        .map(|(i, c)| run(c, derive_seed(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_cases_pass() {
        for c in op_cases() {
            let r = run(c, 0).unwrap();
            assert!(r.passed(), "{} failed: {:?}", r.name, r.report);
        }
    }

    #[test]
    fn block_cases_pass() {
        for c in block_cases(3).unwrap() {
            let r = run(c, 0).unwrap();
            assert!(r.passed(), "{} failed: {:?}", r.name, r.report);
            assert!(r.report.coordinates_checked >= GRADCHECK_SAMPLES);
        }
    }

    #[test]
    fn end_to_end_rejects_bad_geometry() {
        let bad = EndToEnd {
            height: 18,
            ..EndToEnd::default()
        };
        assert!(end_to_end_case(&bad, 0).is_err());
    }
}
