//! Multi-task and transfer learning with similar low-rank linear
//! representations, robust to outlier tasks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod losses;
pub mod mtl;
pub mod rank;
pub mod simbench;
pub mod stiefel;
pub mod tl;

pub use error::{Error, Result};
