//! Class-specific deep autoencoders over sparse spatiotemporal codes for
//! video action classification.

pub mod classify;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod format;
pub mod grbm;
pub mod hddm;
pub mod numeric;
pub mod pipeline;
pub mod scsp;

pub use error::{DdmError, Result};
