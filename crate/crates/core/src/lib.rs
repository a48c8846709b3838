pub mod config;
pub mod curvature;
pub mod data;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod transport;

pub use config::RunConfig;
pub use error::{Error, Result};
