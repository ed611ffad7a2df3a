//! Std companion of `nfsdf-core`: binary and text formats, the experiment
//! configuration, seed splitting and the pipeline behind the `nfsdf` binary.

mod binio;
pub mod bundle;
pub mod config;
mod error;
pub mod harness;
pub mod io;
pub mod manifest;
pub mod obj;
pub mod report;
pub mod seed;
pub mod weights;

pub use error::{Error, Result};
pub use nfsdf_core as core;
