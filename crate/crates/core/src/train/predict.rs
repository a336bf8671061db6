//! Inference, the predictions CSV, and ensembling.

use std::fmt::Write as _;

use super::fit::{predict_images, prepare_examples};
use crate::container::ExamPair;
use crate::error::TrainError;
use crate::nn::Checkpoint;
use crate::raster::RasterImage;
use crate::task::{Modality, Target};
use crate::vf::grid_24_2;

/// Infer-mode predictions in dB, one row per exam, in right-eye order.
pub fn predict_batch(checkpoint: &Checkpoint, exams: &[ExamPair], modality: Modality) -> Result<Vec<Vec<f64>>, TrainError> {
    let h = &checkpoint.header;
    if h.modality != modality {
        return Err(TrainError::ModalityMismatch { trained: h.modality.to_string(), requested: modality.to_string() });
    }
    if h.model.out_channels != h.target.arity() || h.output_scaling.mean.len() != h.target.arity() {
        return Err(TrainError::TargetMismatch {
            model: h.model.out_channels,
            target: h.target.to_string(),
            needed: h.target.arity(),
        });
    }
    if exams.is_empty() {
        return Ok(Vec::new());
    }
    let net = checkpoint.network()?;
    let prepared = prepare_examples(exams, modality, &h.model, &grid_24_2())?;
    let images: Vec<&RasterImage> = prepared.samples.iter().map(|s| &s.images[0]).collect();
    Ok(predict_images(&net, &images, &h.output_scaling)?)
}

/// Elementwise mean of equally shaped prediction matrices.
pub fn ensemble_average(members: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>, TrainError> {
    let first = members.first().ok_or_else(|| TrainError::Ensemble("no prediction matrices given".into()))?;
    for (i, m) in members.iter().enumerate() {
        let same = m.len() == first.len() && m.iter().zip(first).all(|(a, b)| a.len() == b.len());
        if !same {
            return Err(TrainError::Ensemble(format!(
                "member {i} has {} rows x {} columns, member 0 has {} x {}",
                m.len(),
                m.first().map_or(0, Vec::len),
                first.len(),
                first.first().map_or(0, Vec::len)
            )));
        }
    }
    let n = members.len() as f64;
    Ok(first
        .iter()
        .enumerate()
        .map(|(r, row)| (0..row.len()).map(|c| members.iter().map(|m| m[r][c]).sum::<f64>() / n).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub exam_id: String,
    pub values: Vec<f64>,
}

/// Contents of a `predictions.csv` file.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub target: Target,
    pub rows: Vec<PredictionRow>,
}

impl Predictions {
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }
}

pub fn write_predictions_csv(p: &Predictions) -> String {
    let mut s = String::from("exam_id,target");
    for c in 1..=p.target.arity() {
        let _ = write!(s, ",c{c:02}");
    }
    s.push('\n');
    for r in &p.rows {
        let _ = write!(s, "{},{}", r.exam_id, p.target);
        for v in &r.values {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn read_predictions_csv(text: &str) -> Result<Predictions, TrainError> {
    let bad = |m: String| TrainError::Config(format!("predictions.csv: {m}"));
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let cols = headers.len().saturating_sub(2);
    let target = match cols {
        1 => Target::Md,
        52 => Target::Thresholds,
        n => return Err(bad(format!("expected 1 or 52 value columns, found {n}"))),
    };
    if headers.get(0) != Some("exam_id") || headers.get(1) != Some("target") {
        return Err(bad("header must start with exam_id,target".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.get(1) != Some(target.as_str()) {
            return Err(bad(format!("row {}: target {:?} does not match {} columns", i + 1, rec.get(1), cols)));
        }
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("row {}: bad number {v:?}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(PredictionRow { exam_id: rec[0].to_string(), values });
    }
    Ok(Predictions { target, rows })
}
