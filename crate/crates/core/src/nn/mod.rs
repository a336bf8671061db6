//! Dense tensor engine and the regression network.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointHeader, OptimizerMeta, OutputScaling};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{ModelSpec, Network, SeparableBlockSpec};
pub use ops::{Mode, Padding};
pub use tensor::{Scalar, Tensor};
