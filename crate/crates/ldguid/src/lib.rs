//! Filesystem formats, statistics, reports and the `ldguid` command line on
//! top of [`ldguid_core`].

pub use ldguid_core as core;

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod raster;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
