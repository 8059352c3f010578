pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod lanegen;
pub mod mpc;
pub mod neuralnet;
pub mod qpsolver;
pub mod simulator;

pub use error::{Error, Result};
