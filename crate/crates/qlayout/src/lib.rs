//! File formats, threading and the experiment harness around `qlayout-core`.

pub mod checkpoint;
pub mod cli;
pub mod compare;
pub mod config;
pub mod data_io;
pub mod docs;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod workers;

pub use error::{Error, Result};
pub use workers::Workers;
