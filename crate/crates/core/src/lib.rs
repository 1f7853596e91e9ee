//! Structure-texture decomposition with a generalized low patch rank model.
//!
//! An image `f` observed on a mask `M` is split as `f = M(u + v)` with `u`
//! piecewise smooth (MCP-penalized total variation) and `v` a texture whose
//! patch matrix has low rank (nuclear norm). [`admm`] solves the model
//! directly; [`lprnet`] evaluates the unrolled network obtained by learning
//! the operators and scalars of a fixed number of ADMM iterations.

pub mod admm;
pub mod error;
pub mod harness;
pub mod imgcore;
pub mod lprnet;
pub mod operators;
pub mod prox;
pub mod synthgen;

pub use error::{Error, Result, WeightsError};
