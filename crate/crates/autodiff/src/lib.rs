//! Minimal dense tensors with tape-based reverse-mode differentiation.
//!
//! Everything is `f64` and rank-2 in practice. Broadcasting is limited to
//! adding a `[1, n]` bias row to an `[m, n]` matrix.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, exponential_decay, AdamConfig, AdamError, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use params::{sum_gradients, BoundParams, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Result, Tensor, TensorError};
