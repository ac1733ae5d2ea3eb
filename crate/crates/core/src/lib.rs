pub mod accounting;
pub mod binarize;
pub mod checkpoint;
pub mod cli;
pub mod compute;
pub mod data;
pub mod embedding;
pub mod error;
pub mod exit;
pub mod frozen;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod train;

pub use error::{Error, Result};
