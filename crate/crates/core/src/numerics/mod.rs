//! Minimal reverse-mode differentiable numerics: parameter storage, tape,
//! Adam, finite-difference gradient checking, and the checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, grad_check_with_corruption, GradCheckReport};
pub use params::{init_mlp, mlp_layer_names, ParamEntry, ParamStore};
pub use tape::{mlp_forward, BackwardResult, NodeId, Tape};
