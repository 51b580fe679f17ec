//! Reverse-mode autodiff over dense `f64` matrices.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] replays it in
//! reverse, accumulating gradients into every node that (transitively) depends
//! on a parameter leaf. Tapes are built per training step and dropped after the
//! optimizer update.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_archive, save_archive};
pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck};
pub use params::{BoundParams, Param, ParamSet};
pub use tape::{ActivationKind, DiffError, NodeId, Tape};
