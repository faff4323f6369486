pub mod cli;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod explain;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};
