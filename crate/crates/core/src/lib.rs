//! Visual-field estimation from circumpapillary OCT and SLO images.

pub mod augment;
pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod split;
pub mod synth;
pub mod task;
pub mod train;
pub mod vf;

pub use config::{EvalOptions, RunConfig};
pub use container::{parse_container, write_container, ExamPair, OctRing, RingDiameter};
pub use error::{CheckpointError, ContainerError, ImageError, IngestError, MetricError, TensorError, TrainError, VfError};
pub use raster::RasterImage;
pub use task::{Modality, Target};
pub use vf::{grid_24_2, Eye, ReliabilityLimits, Sector, SectorMap, VfExam, VfGrid};
