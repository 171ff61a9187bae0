// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod corpus;
pub mod error;
pub mod internals;
pub mod io;
pub mod memscore;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
