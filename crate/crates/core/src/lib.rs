//! Softmax self-attention approximations of the steady-state Kalman
//! predictor and the LQG controller.
//!
//! - [`attention`]: quadratic token embedding and the attention head that
//!   reproduces Gaussian-kernel Nadaraya–Watson smoothing exactly.
//! - [`filter`]: Kalman predictor and the windowed transformer filter.
//! - [`control`]: transformer measurement-feedback controller and its
//!   paired simulation against LQG.
//! - [`bounds`]: temperature lower bounds and the closed-loop block matrix.
//! - [`system`], [`linalg`]: plants, gain synthesis and matrix primitives.

pub mod attention;
pub mod bounds;
pub mod control;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod noise;
pub mod random;
pub mod system;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
