// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal dense-tensor core with reverse-mode automatic differentiation.
//!
//! Enough machinery to train and run small decoder-only transformers on a
//! CPU, deterministically: row-major tensors, a recording [`Graph`] with
//! the handful of fused ops a transformer needs, [`Adam`], and counter-based
//! [`RngStream`]s.

mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod rng;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use kernels::{AttnShape, NORM_EPS};
pub use optim::{Adam, AdamConfig};
pub use rng::{RngStream, RNG_ALGORITHM};
pub use scalar::{MatRef, Scalar};
pub use tensor::{cross_entropy, gaussian, Tensor};
