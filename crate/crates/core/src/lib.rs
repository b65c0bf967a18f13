// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dist;
pub mod algorithms;
pub mod envs;
pub mod harness;
pub mod error;
pub mod nn;
pub mod optim;
pub mod policy;
pub mod rollout;
pub mod tabular;

pub use error::{Error, Result};
pub mod verify;
