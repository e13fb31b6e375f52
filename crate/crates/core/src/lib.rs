pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod global_encoder;
pub mod head;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod relational;
pub mod train;

pub use error::{Error, Result};
