use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the visual-field data model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VfError {
    #[error("expected {expected} threshold values, got {got}")]
    ThresholdCount { expected: usize, got: usize },
    #[error("threshold {value} dB at active index {index} is outside [-1, 50]")]
    ThresholdRange { index: usize, value: f32 },
    #[error("reliability index {name}={value} is outside [0, 1]")]
    ReliabilityRange { name: &'static str, value: f32 },
    #[error("mean deviation is not finite")]
    NonFiniteMd,
    #[error("grid point ({x}, {y}) has no mirror partner at ({mx}, {y})")]
    NotMirrorSymmetric { x: i32, y: i32, mx: i32 },
    #[error("sector table row {row}: {message}")]
    SectorTable { row: usize, message: String },
    #[error("unassigned point: active index {index} has no sector")]
    UnassignedPoint { index: usize },
    #[error("sector {0} has no points")]
    EmptySector(&'static str),
    #[error("retest table row {row}: {message}")]
    RetestTable { row: usize, message: String },
}

/// Errors raised while reading or writing the exam container.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContainerError {
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported container version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u16 },
    #[error("truncated payload at offset {offset}: need {needed} bytes, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("non-finite pixel at offset {offset}")]
    NanPixel { offset: usize },
    #[error("pixel value {value} outside [0, 1] at offset {offset}")]
    PixelRange { offset: usize, value: f32 },
    #[error("duplicate ring diameter {diameter_mm} mm at offset {offset}")]
    DuplicateRing { offset: usize, diameter_mm: f32 },
    #[error("unknown ring diameter {diameter_mm} mm at offset {offset}")]
    UnknownDiameter { offset: usize, diameter_mm: f32 },
    #[error("invalid eye code {code} at offset {offset}")]
    InvalidEye { offset: usize, code: u8 },
    #[error("image dimensions {width}x{height} at offset {offset} are invalid")]
    InvalidDimensions { offset: usize, width: u32, height: u32 },
    #[error("blind-spot slot {slot} at offset {offset} must hold NaN")]
    BlindSpotSlot { offset: usize, slot: usize },
    #[error("invalid exam record at offset {offset}: {source}")]
    InvalidExam { offset: usize, source: VfError },
    #[error("{count} trailing bytes after the last exam at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("too many exams for the container format")]
    TooManyExams,
}

/// Errors raised by raster validation and preprocessing.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image {width}x{height} needs {expected} pixels, got {got}")]
    PixelCount { width: usize, height: usize, expected: usize, got: usize },
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
    #[error("pixel {index} has value {value}, outside [0, 1]")]
    PixelRange { index: usize, value: f32 },
    #[error("intensity range is empty (min == max == {0})")]
    EmptyRange(f64),
}

/// Errors raised by the tensor engine and network.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} elements, got {got}")]
    ElementCount { shape: Vec<usize>, expected: usize, got: usize },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("batch-norm in train mode needs a non-empty batch")]
    EmptyBatch,
    #[error("non-finite value after layer {layer}")]
    NonFinite { layer: String },
    #[error("invalid model spec: {0}")]
    Spec(String),
}

/// Errors raised by checkpoint (de)serialization.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint truncated at offset {0}")]
    Truncated(usize),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint holds {got} weights, model expects {expected}")]
    WeightCount { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors raised by training and prediction.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite training loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("model outputs {model} values but target {target} needs {needed}")]
    TargetMismatch { model: usize, target: String, needed: usize },
    #[error("checkpoint was trained on {trained} but {requested} was requested")]
    ModalityMismatch { trained: String, requested: String },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("ensemble: {0}")]
    Ensemble(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Vf(#[from] VfError),
}

/// Errors raised by metrics and report generation.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{op}: inputs have lengths {measured} and {predicted}")]
    LengthMismatch { op: &'static str, measured: usize, predicted: usize },
    #[error("{op}: need at least {min} elements, got {got}")]
    TooFew { op: &'static str, min: usize, got: usize },
    #[error("{0}: zero variance")]
    ZeroVariance(&'static str),
    #[error("bootstrap: statistic undefined after {0} redraws")]
    DegenerateResample(usize),
    #[error("bootstrap: iterations must be >= 1 and level in (0, 1)")]
    BootstrapConfig,
    #[error("bin step must be positive")]
    BinStep,
    #[error("bin center {center} dB is outside the retest table range [{low}, {high}]")]
    OutsideRetestTable { center: f64, low: f64, high: f64 },
    #[error("retest table is empty")]
    EmptyRetestTable,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Errors raised by tabular ingestion (CSV + image files).
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path} row {row}: {message}")]
    Row { path: PathBuf, row: usize, message: String },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("split: {0}")]
    Split(String),
    #[error(transparent)]
    Vf(#[from] VfError),
}
