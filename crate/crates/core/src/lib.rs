//! Fisher information and Cramér–Rao bounds for parameter estimation from
//! multi-channel photon-counting records of an open quantum emitter.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimator;
pub mod fisher;
pub mod io;
pub mod lindblad;
pub mod linalg;
pub mod model;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
