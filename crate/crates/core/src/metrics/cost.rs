//! Parameter and floating-point-operation accounting.
//!
//! A multiply-add counts as two operations. Costs of the non-conv ops:
//!
//! | op | cost |
//! |---|---|
//! | conv2d | `2 * out * in_c * kh * kw`, plus `out` with bias |
//! | transposed conv | `2 * in * out_c * kh * kw` |
//! | global average pool | one per input element |
//! | instance norm | five per element |
//! | relu, add, sub, mul, scale | one per output element |
//! | sigmoid | four per element |
//! | 2x2 average pool | one per input element |
//! | bilinear upsample | seven per output element (none at factor 1) |
//! | Haar analysis | eight per output element |
//! | Haar synthesis | one per output element |
//! | concat, slice, depth-to-space | free |
//!
//! Counts depend only on the configuration and input size.

use crate::model::{schema, ModelConfig};
use crate::tensor::Shape;

/// Per-op costs shared by the analytic counter and
/// [`crate::autograd::Tape::forward_flops`].
pub mod op_flops {
    use crate::tensor::Shape;

    pub fn conv(out_elems: u64, kernel: Shape, bias: bool) -> u64 {
        2 * out_elems * (kernel.c * kernel.h * kernel.w) as u64 + if bias { out_elems } else { 0 }
    }

    pub fn conv_transposed(in_elems: u64, kernel: Shape) -> u64 {
        2 * in_elems * (kernel.c * kernel.h * kernel.w) as u64
    }

    pub fn global_avg_pool(in_elems: u64) -> u64 {
        in_elems
    }

    pub fn instance_norm(elems: u64) -> u64 {
        5 * elems
    }

    pub fn elementwise(elems: u64) -> u64 {
        elems
    }

    pub fn sigmoid(elems: u64) -> u64 {
        4 * elems
    }

    pub fn avg_downsample2(in_elems: u64) -> u64 {
        in_elems
    }

    pub fn bilinear_upsample(out_elems: u64, factor: usize) -> u64 {
        if factor == 1 {
            0
        } else {
            7 * out_elems
        }
    }

    pub fn haar_analysis(out_elems: u64) -> u64 {
        8 * out_elems
    }

    /// One multiply per output element; outputs are four per input.
    pub fn haar_synthesis(in_elems: u64) -> u64 {
        4 * in_elems
    }
}

/// Learnable scalars for `cfg` (Haar filters excluded).
pub fn count_params(cfg: &ModelConfig) -> usize {
    schema(cfg).iter().map(|s| s.shape.numel()).sum()
}

struct Counter<'a> {
    cfg: &'a ModelConfig,
    total: u64,
}

impl Counter<'_> {
    fn conv(&mut self, out_c: usize, in_c: usize, k: usize, plane: u64) {
        self.total += op_flops::conv(out_c as u64 * plane, Shape::new(out_c, in_c, k, k), true);
    }

    fn ew(&mut self, elems: u64) {
        self.total += op_flops::elementwise(elems);
    }

    fn attention(&mut self, plane: u64) {
        let (nc, hid) = (self.cfg.nc, self.cfg.ca_hidden());
        self.total += op_flops::global_avg_pool(nc as u64 * plane);
        self.conv(hid, nc, 1, 1);
        self.ew(hid as u64);
        self.conv(nc, hid, 1, 1);
        self.total += op_flops::sigmoid(nc as u64);
    }

    fn noise_estimator(&mut self, plane: u64) {
        let nc = self.cfg.nc;
        let feat = nc as u64 * plane;
        self.conv(nc, 1, 3, plane);
        for _ in 0..2 {
            self.conv(nc, nc, 3, plane);
            self.total += op_flops::instance_norm(feat);
            self.ew(feat);
            self.conv(nc, nc, 3, plane);
            self.total += op_flops::instance_norm(feat);
            self.attention(plane);
            self.ew(feat);
            self.ew(feat);
        }
        self.conv(1, nc, 3, plane);
    }

    fn bandpass(&mut self, plane: u64) {
        let nc = self.cfg.nc as u64;
        let quarter = plane / 4;
        for _ in 0..4 {
            self.total += op_flops::haar_analysis(nc * quarter);
            self.attention(quarter);
            self.ew(nc * quarter);
            self.ew(nc * quarter);
            self.total += op_flops::haar_synthesis(nc * quarter);
            self.ew(nc * plane);
            self.ew(nc * plane);
        }
    }

    fn kernel_select(&mut self, plane: u64) {
        let nc = self.cfg.nc;
        let feat = nc as u64 * plane;
        self.conv(nc, nc / 2, 5, plane);
        self.conv(nc, nc / 2, 3, plane);
        self.ew(feat);
        self.attention(plane);
        self.ew(nc as u64);
        self.ew(nc as u64);
        self.ew(feat);
        self.ew(feat);
        self.ew(feat);
    }
}

/// Forward-pass operations for one `h x w` frame.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> u64 {
    let plane = (h * w) as u64;
    let nc = cfg.nc as u64;
    let mut c = Counter { cfg, total: 0 };
    if cfg.use_noise_estimator {
        c.noise_estimator(plane);
    }
    c.conv(cfg.nc, cfg.stem_in_channels(), 3, plane);
    let mut branch_plane = plane;
    for b in 1..=cfg.branches {
        if b > 1 {
            c.total += op_flops::avg_downsample2(nc * branch_plane);
            branch_plane /= 4;
        }
        if cfg.use_bandpass_attention {
            c.bandpass(branch_plane);
        }
        for _ in 0..cfg.blocks_per_branch {
            c.kernel_select(branch_plane);
        }
        c.total += op_flops::bilinear_upsample(nc * plane, 1 << (b - 1));
        c.conv(1, cfg.nc, 3, plane);
        c.ew(plane);
        c.ew(plane);
    }
    c.conv(4, 1, 3, plane);
    c.total
}

/// Parameter count and forward cost of one configuration at one input
/// size.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSummary {
    pub params: usize,
    pub flops: u64,
    pub input: (usize, usize),
}

impl CostSummary {
    pub fn of(cfg: &ModelConfig, h: usize, w: usize) -> Self {
        CostSummary {
            params: count_params(cfg),
            flops: count_flops(cfg, h, w),
            input: (h, w),
        }
    }

    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::model::{flsn_forward, ModelParams};
    use crate::tensor::{ConvGeometry, Tensor};

    #[test]
    fn single_conv_closed_form() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(Shape::new(1, 1, 8, 8)));
        let k = tape.param(Tensor::zeros(Shape::new(1, 1, 3, 3)));
        let b = tape.param(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        tape.conv2d(x, k, Some(b), ConvGeometry::same(3)).unwrap();
        assert_eq!(tape.forward_flops(), 2 * 64 * 9 + 64);
        assert_eq!(tape.forward_flops(), 1216);
    }

    /// The analytic walker and the tape's per-node sum are independent
    /// routes to the same number.
    #[test]
    fn analytic_count_matches_recorded_forward() {
        for (ne, ba, branches, blocks) in [
            (true, true, 2, 1),
            (false, true, 3, 2),
            (true, false, 1, 1),
            (false, false, 2, 3),
        ] {
            let cfg = ModelConfig {
                nc: 6,
                branches,
                blocks_per_branch: blocks,
                use_noise_estimator: ne,
                use_bandpass_attention: ba,
                ca_reduction: 3,
            };
            let (h, w) = (16, 24);
            let params = ModelParams::<f64>::init(&cfg, 1).unwrap();
            let mut tape = Tape::new();
            let p = params.bind(&mut tape, false);
            let before = tape.forward_flops();
            let x = tape.constant(Tensor::zeros(Shape::new(1, 1, h, w)));
            flsn_forward(&mut tape, &p, &cfg, x).unwrap();
            assert_eq!(before, 0);
            assert_eq!(tape.forward_flops(), count_flops(&cfg, h, w), "{cfg:?}");
        }
    }

    #[test]
    fn tiny_param_total_matches_hand_enumeration() {
        // noise estimator: head 40, two residual blocks of 148 + 148 + 5 + 8,
        // tail 37 -> 695; stem 2 -> 4 channels: 76; per branch: four band
        // attentions of 13 plus four band weights (56), one block
        // 204 + 76 + 13 (293), head 37, alpha 1 -> 387; upscale 40.
        assert_eq!(695 + 76 + 2 * 387 + 40, 1585);
        assert_eq!(count_params(&ModelConfig::tiny()), 1585);
    }

    #[test]
    fn ablations_are_cheaper() {
        let full = ModelConfig::default();
        let no_ne = ModelConfig {
            use_noise_estimator: false,
            ..full.clone()
        };
        let no_ba = ModelConfig {
            use_bandpass_attention: false,
            ..full.clone()
        };
        assert!(count_params(&full) > count_params(&no_ba));
        assert!(count_params(&no_ba) > 0);
        assert!(count_params(&full) > count_params(&no_ne));
        assert!(count_flops(&full, 64, 64) > count_flops(&no_ne, 64, 64));
    }
}
