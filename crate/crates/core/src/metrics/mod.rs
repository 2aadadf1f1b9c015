//! Image fidelity metrics, model cost accounting and dataset evaluation.

pub mod cost;
mod eval;
mod quality;

pub use cost::{count_flops, count_params, CostSummary};
pub use eval::{evaluate, BilinearBaseline, EvalReport, EvalRow, Predictor, REPORT_HEADER};
pub use quality::{rmse, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
