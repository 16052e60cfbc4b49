//! Linear off-policy value estimation on finite MDPs.
//!
//! The crate covers exact objective and fixed-point analysis, the family of
//! incremental off-policy prediction algorithms, their expected-update
//! dynamics, nonlinear control with a mellowmax operator, and the experiment
//! harness behind the `offpolicy` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod agents;
pub mod analysis;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod mdp;

pub use error::{Error, Result};
