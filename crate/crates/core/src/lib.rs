//! Graph-guided fine-tuning: label propagation over in-batch similarity
//! graphs as a training loss, plus the baselines it is compared against.

pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod evaluation;
pub mod error;
pub mod graph;
pub mod losses;
pub mod lpa;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
