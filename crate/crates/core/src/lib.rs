//! En-route travel time estimation with a learned re-prediction gate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod grad;
pub mod nn;
pub mod predictor;
pub mod replay;
pub mod reward;
pub mod training;

pub use error::{Error, Result};
