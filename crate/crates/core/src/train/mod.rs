//! Training protocol: Adam, plateau learning-rate schedule, fixed steps per
//! epoch, model selection on validation R², prediction and ensembling.

mod adam;
mod fit;
mod predict;
mod schedule;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fit::{fit, prepare_examples, EpochLog, FitOutput, Prepared, TrainingLog, LOG_HEADER};
pub use predict::{
    ensemble_average, predict_batch, read_predictions_csv, write_predictions_csv, PredictionRow, Predictions,
};
pub use schedule::{plateau_scheduler, EarlyStopping, PlateauScheduler};

use crate::task::{Modality, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub target: Target,
    pub modality: Modality,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            batch_size: 4,
            steps_per_epoch: 300,
            plateau_patience: 10,
            plateau_factor: 0.75,
            max_epochs: 200,
            early_stop_patience: 30,
            target: Target::Thresholds,
            modality: Modality::Ring3_5,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            v.push(format!("train.lr0 {} must be finite and > 0", self.lr0));
        }
        if self.batch_size == 0 {
            v.push("train.batch_size must be >= 1".into());
        }
        if self.steps_per_epoch == 0 {
            v.push("train.steps_per_epoch must be >= 1".into());
        }
        if self.plateau_patience == 0 {
            v.push("train.plateau_patience must be >= 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            v.push(format!("train.plateau_factor {} not in (0, 1)", self.plateau_factor));
        }
        if self.max_epochs == 0 {
            v.push("train.max_epochs must be >= 1".into());
        }
        if self.early_stop_patience == 0 {
            v.push("train.early_stop_patience must be >= 1".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            v.push(format!("train.adam betas ({}, {}) must lie in [0, 1)", a.beta1, a.beta2));
        }
        if !(a.eps > 0.0) {
            v.push(format!("train.adam.eps {} must be > 0", a.eps));
        }
        v
    }
}
