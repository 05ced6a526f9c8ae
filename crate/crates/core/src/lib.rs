//! Flexible-body dynamics by synthesizing single-step linear modal
//! responses in a sequence of reconfigured inertial frames.
//!
//! Units are mm, Mg, s and N throughout. Models carry translational
//! degrees of freedom only; node `i` owns DOFs `3i..3i + 3`.

pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod factory;
pub mod loads;
pub mod model;
pub mod modelfile;
pub mod output;
pub mod par;
pub mod rigid;
pub mod rotation;
pub mod sweep;
pub mod synthesis;
pub mod trajectory;

pub use error::{Error, Result};
