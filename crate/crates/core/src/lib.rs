pub mod algorithms;
pub mod availability;
pub mod error;
pub mod harness;
pub mod problems;
pub mod rng;
pub mod schedules;
pub mod simulation;
pub mod vector;

pub use error::{Error, Result};
pub use vector::ParamVector;
