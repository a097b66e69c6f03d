//! Causally controllable synthetic data for mixed-type observational tables.

pub mod bgmm;
pub mod control;
pub mod cvae;
pub mod data;
pub mod demo;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nn;
pub mod objective;
pub mod parallel;
pub mod pipeline;

pub use error::{Error, Result};
