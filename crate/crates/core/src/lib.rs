#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod error;
pub mod evaluation;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod policy_opt;
pub mod prefdata;
pub mod reward_training;
pub mod rng;

pub use error::{Error, Result};
