//! File formats, experiment configuration and the command line around
//! `satforge-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
pub use satforge_core as core;
