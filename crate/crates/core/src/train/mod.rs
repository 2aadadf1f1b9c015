//! Optimization: L1 objective, Adam, step learning-rate schedule and the
//! training loop with deterministic resume.

mod adam;
mod config;
mod fit;

pub use adam::{adam_step, OptimState};
pub use config::{lr_at, parse_real, AdamParams, TrainConfig};
pub use fit::{
    checkpoint_name, dataset_l1, fit, loss_and_grads, pick_frame, pick_frame_index, EpochSummary, FitOptions,
    FitOutcome, LogRow, TrainLog, FINAL_CHECKPOINT, LOG_FILE, LOG_HEADER,
};
