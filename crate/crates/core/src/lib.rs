pub mod dynamics;
pub mod association;
pub mod cli;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod metrics;
pub mod sensors;
pub mod sim;

pub use error::{Error, Result};
