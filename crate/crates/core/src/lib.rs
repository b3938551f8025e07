//! Latent-belief energy-based model for multimodal multi-agent trajectory
//! forecasting.
//!
//! The pipeline: per-agent history encoding and masked social pooling, a
//! conditional EBM over a low-dimensional latent belief space trained with a
//! variational objective and short-run Langevin sampling, two-step
//! plan-then-predict decoding, and a best-of-K ADE/FDE + KDE-NLL evaluation
//! harness. Everything trains in 64-bit floats on a small reverse-mode tape.

pub mod checks;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod model;
pub mod numerics;
pub mod pooling;
pub mod sampler;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
