//! The epoch loop.

use std::fmt::Write as _;

use rand::Rng;

use super::adam::{adam_step, AdamState};
use super::schedule::{EarlyStopping, PlateauScheduler};
use super::TrainConfig;
use crate::augment::{augment_sample, resize_bilinear, AugSample, AugmentConfig};
use crate::container::ExamPair;
use crate::error::{TensorError, TrainError};
use crate::eval::metrics::flatten;
use crate::eval::{mse, r2};
use crate::nn::ops::{mse_loss, Mode};
use crate::nn::{Checkpoint, CheckpointHeader, ModelSpec, Network, OptimizerMeta, OutputScaling, Tensor};
use crate::raster::RasterImage;
use crate::rng::{rng_for, stream_seed, TAG_EPOCH};
use crate::task::{Modality, Target};
use crate::vf::{grid_24_2, VfGrid};

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_r2,lr";

/// Batch size used for validation forward passes (infer mode, so it does
/// not change the result).
const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training MSE over the epoch's steps, in dB².
    pub train_loss: f64,
    /// Validation MSE in dB².
    pub val_loss: f64,
    pub val_r2: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let r2 = e.val_r2.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, r2, e.lr);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub best: Checkpoint,
    pub log: TrainingLog,
}

/// Right-eye exams with the modality image resized to the model input.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub samples: Vec<AugSample>,
}

pub fn prepare_examples(
    exams: &[ExamPair],
    modality: Modality,
    spec: &ModelSpec,
    grid: &VfGrid,
) -> Result<Prepared, TrainError> {
    let samples = exams
        .iter()
        .map(|e| {
            let e = e.to_right_eye(grid)?;
            let img = resize_bilinear(modality.image(&e), spec.input_width, spec.input_height);
            Ok(AugSample { images: vec![img], vf: e.vf })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(Prepared { samples })
}

pub(crate) fn batch_tensor(images: &[&RasterImage]) -> Result<Tensor<f32>, TensorError> {
    let (w, h) = (images[0].width(), images[0].height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        data.extend_from_slice(img.pixels());
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

/// Infer-mode predictions in target units.
pub(crate) fn predict_images(
    net: &Network<f32>,
    images: &[&RasterImage],
    scaling: &OutputScaling,
) -> Result<Vec<Vec<f64>>, TensorError> {
    let mut rows = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let out = net.forward(&batch_tensor(chunk)?, Mode::Infer)?;
        let k = out.shape()[1];
        for r in out.data().chunks(k) {
            rows.push(r.iter().enumerate().map(|(j, &z)| scaling.mean[j] + scaling.scale * z as f64).collect());
        }
    }
    Ok(rows)
}

/// Per-output mean and one pooled standard deviation over all outputs.
fn fit_scaling(targets: &[Vec<f64>]) -> OutputScaling {
    let k = targets[0].len();
    let n = targets.len() as f64;
    let mean: Vec<f64> = (0..k).map(|j| targets.iter().map(|t| t[j]).sum::<f64>() / n).collect();
    let ss: f64 = targets.iter().flat_map(|t| t.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m))).sum();
    let sd = (ss / (n * k as f64)).sqrt();
    OutputScaling { mean, scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 } }
}

fn check_spec(spec: &ModelSpec, target: Target) -> Result<(), TrainError> {
    spec.validate()?;
    if spec.out_channels != target.arity() {
        return Err(TrainError::TargetMismatch {
            model: spec.out_channels,
            target: target.to_string(),
            needed: target.arity(),
        });
    }
    if spec.in_channels != 1 {
        return Err(TrainError::Config(format!("model.in_channels {} must be 1 (grayscale input)", spec.in_channels)));
    }
    Ok(())
}

/// Trains one model and returns the checkpoint with the highest validation
/// R² along with the per-epoch log.
pub fn fit(
    train: &[ExamPair],
    val: &[ExamPair],
    spec: &ModelSpec,
    config: &TrainConfig,
    augment: &AugmentConfig,
) -> Result<FitOutput, TrainError> {
    let mut problems = config.violations();
    problems.extend(augment.violations());
    if !problems.is_empty() {
        return Err(TrainError::Config(problems.join("; ")));
    }
    if train.is_empty() {
        return Err(TrainError::EmptyPartition("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyPartition("val"));
    }
    check_spec(spec, config.target)?;

    let grid = grid_24_2();
    let train_set = prepare_examples(train, config.modality, spec, &grid)?.samples;
    let val_set = prepare_examples(val, config.modality, spec, &grid)?.samples;
    let target = config.target;
    let scaling = fit_scaling(&train_set.iter().map(|s| target.values(&s.vf)).collect::<Vec<_>>());
    let val_truth: Vec<Vec<f64>> = val_set.iter().map(|s| target.values(&s.vf)).collect();
    let val_images: Vec<&RasterImage> = val_set.iter().map(|s| &s.images[0]).collect();

    let mut net: Network<f32> = Network::init(spec, config.seed)?;
    let mut adam = AdamState::new(net.params(), config.adam);
    let mut sched = PlateauScheduler::new(config.lr0, config.plateau_patience, config.plateau_factor);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    let k = target.arity();
    let bs = config.batch_size;
    let inv_scale = 1.0 / scaling.scale;

    for epoch in 1..=config.max_epochs {
        let lr = sched.lr();
        let mut draw_rng = rng_for(&[TAG_EPOCH, config.seed, epoch as u64]);
        let mut loss_sum = 0.0;
        for step in 0..config.steps_per_epoch {
            let mut images = Vec::with_capacity(bs);
            let mut targets = Vec::with_capacity(bs * k);
            for b in 0..bs {
                let idx = draw_rng.random_range(0..train_set.len());
                let draw = (step * bs + b) as u64;
                let s = augment_sample(&train_set[idx], augment, stream_seed(config.seed, draw, epoch as u64), &grid)?;
                for (j, v) in target.values(&s.vf).into_iter().enumerate() {
                    targets.push(((v - scaling.mean[j]) * inv_scale) as f32);
                }
                images.push(s.images.into_iter().next().expect("one image per sample"));
            }
            let input = batch_tensor(&images.iter().collect::<Vec<_>>())?;
            let trace = net.forward_trace(&input, Mode::Train)?;
            let (loss, grad) = mse_loss(trace.output(), &Tensor::new(vec![bs, k], targets)?)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            loss_sum += loss as f64;
            let grads = net.backward(&trace, &grad)?;
            let names = net.param_names().to_vec();
            adam_step(net.params_mut(), &grads, &names, &mut adam, lr)?;
            net.update_running_stats(&trace);
        }
        let train_loss = loss_sum / config.steps_per_epoch as f64 * scaling.scale * scaling.scale;

        let pred = predict_images(&net, &val_images, &scaling)?;
        let (m, p) = (flatten(&val_truth), flatten(&pred));
        let val_loss = mse(&m, &p)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, step: config.steps_per_epoch });
        }
        let val_r2 = r2(&m, &p).ok();
        log::info!(
            "epoch {epoch}: train {train_loss:.4} val {val_loss:.4} r2 {} lr {lr:e}",
            val_r2.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
        );
        log.epochs.push(EpochLog { epoch, train_loss, val_loss, val_r2, lr });

        let score = val_r2.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            let header = CheckpointHeader {
                model: spec.clone(),
                modality: config.modality,
                target,
                epoch,
                seed: config.seed,
                optimizer: OptimizerMeta {
                    kind: "adam".into(),
                    lr,
                    beta1: config.adam.beta1,
                    beta2: config.adam.beta2,
                    eps: config.adam.eps,
                    step: adam.t,
                },
                output_scaling: scaling.clone(),
                val_r2,
            };
            best = Some((score, Checkpoint { header, weights: net.to_blob() }));
        }

        sched.step(val_loss);
        if stopper.step(val_loss) {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    let (_, best) = best.expect("at least one epoch runs");
    Ok(FitOutput { best, log })
}
