//! File formats, PNG IO, datasets, reports and the command line tool for the
//! xcat super-resolution network. The computation lives in `xcat-core`.

pub mod cli;
pub mod dataset;
pub mod format;
pub mod image_io;
pub mod manifest;
pub mod report;

pub use xcat_core as core;
