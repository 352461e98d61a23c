pub mod cli;
pub mod conic;
pub mod control;
pub mod feeder;
pub mod kernel;
pub mod scenario;
pub mod sim;
pub mod trainer;
pub mod error;

pub use error::{Error, Result};
