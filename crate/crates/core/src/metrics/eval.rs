use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::cost::CostSummary;
use super::quality::{rmse, ssim};
use crate::error::{Error, Result};
use crate::model::Flsn;
use crate::synth::{denormalize, normalize, Dataset, INTENSITY_MAX};
use crate::tensor::{bilinear_upsample, Tensor};

pub const REPORT_HEADER: &str = "sample,frame,rmse,ssim";

/// Anything that maps a normalized `(1, 1, h, w)` frame to a normalized
/// `(1, 1, 2h, 2w)` estimate.
pub trait Predictor: Sync {
    fn predict(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>>;

    /// Parameter and operation counts at input size `h x w`.
    fn cost(&self, h: usize, w: usize) -> CostSummary;
}

impl Predictor for Flsn<f32> {
    fn predict(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.infer(frame)
    }

    fn cost(&self, h: usize, w: usize) -> CostSummary {
        CostSummary::of(&self.config, h, w)
    }
}

/// Reference predictor: bilinear 2x upsampling of the input frame.
#[derive(Clone, Copy, Debug, Default)]
pub struct BilinearBaseline;

impl Predictor for BilinearBaseline {
    fn predict(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
        bilinear_upsample(frame, 2)
    }

    fn cost(&self, h: usize, w: usize) -> CostSummary {
        CostSummary {
            params: 0,
            flops: 0,
            input: (h, w),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub sample: String,
    pub frame: usize,
    /// On the 0..65535 intensity scale.
    pub rmse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_rmse: f64,
    pub mean_ssim: f64,
    pub cost: CostSummary,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.sample, r.frame, r.rmse, r.ssim));
        }
        out.push_str(&format!("ALL,-,{},{}\n", self.mean_rmse, self.mean_ssim));
        out
    }
}

/// Runs `model` on the listed frames of every sample, compares the
/// denormalized output with the reference and writes the CSV report to
/// `report_path` if given. Samples are processed in parallel; rows keep
/// dataset order.
pub fn evaluate<P: Predictor>(
    model: &P,
    dataset: &Dataset,
    frames: &[usize],
    report_path: Option<&Path>,
) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(Error::Config("no frames selected for evaluation".into()));
    }
    if let Some(&bad) = frames.iter().find(|&&f| f >= crate::synth::FRAMES_PER_SAMPLE) {
        return Err(Error::Config(format!("frame index {bad} out of range 0..15")));
    }
    let per_sample: Vec<Vec<EvalRow>> = dataset
        .samples
        .par_iter()
        .zip(&dataset.names)
        .map(|(sample, name)| {
            let label = name.rsplit('/').next().unwrap_or(name).to_string();
            let target = sample.hr.cast::<f64>();
            frames
                .iter()
                .map(|&f| {
                    let pred = model.predict(&normalize(&sample.frames[f]))?;
                    let pred = denormalize(&pred).cast::<f64>();
                    Ok(EvalRow {
                        sample: label.clone(),
                        frame: f,
                        rmse: rmse(&pred, &target)?,
                        ssim: ssim(&pred, &target, INTENSITY_MAX)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<EvalRow> = per_sample.into_iter().flatten().collect();
    let count = rows.len() as f64;
    let (h, w) = dataset.lr_size();
    let report = EvalReport {
        mean_rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / count,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / count,
        rows,
        cost: model.cost(h, w),
    };
    if let Some(path) = report_path {
        fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synth::{build_dataset, DatasetSpec, Split};

    fn dataset(dir: &Path) -> Dataset {
        let spec = DatasetSpec {
            samples: 3,
            split: Split::Test,
            lr_height: 16,
            lr_width: 16,
            seed: 11,
            ..DatasetSpec::default()
        };
        build_dataset(&spec, dir).unwrap();
        Dataset::load(dir, Split::Test).unwrap()
    }

    #[test]
    fn bilinear_baseline_report() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = dataset(tmp.path());
        let path = tmp.path().join("report.csv");
        let frames: Vec<usize> = (0..15).collect();
        let rep = evaluate(&BilinearBaseline, &ds, &frames, Some(&path)).unwrap();
        assert_eq!(rep.rows.len(), 3 * 15);
        assert!(rep.mean_rmse.is_finite() && rep.mean_rmse > 0.0);
        let mean = rep.rows.iter().map(|r| r.rmse).sum::<f64>() / rep.rows.len() as f64;
        assert_eq!(mean, rep.mean_rmse);
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines.len(), 1 + 45 + 1);
        assert!(lines[1].starts_with("sample_00000,0,"));
        assert!(lines.last().unwrap().starts_with("ALL,-,"));
    }

    #[test]
    fn frame_subset_and_model_cost() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = dataset(tmp.path());
        let model = Flsn::<f32>::new(ModelConfig::tiny(), 1).unwrap();
        let rep = evaluate(&model, &ds, &[0, 7], None).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert_eq!(rep.cost.params, 1585);
        assert!(rep.cost.flops > 0);
        assert!(evaluate(&model, &ds, &[15], None).is_err());
    }
}
