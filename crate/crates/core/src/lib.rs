//! Numeric core for embedding-conditioned speaker-adaptive training.
//!
//! Everything here is pure computation over `alloc` containers: the dense
//! network engine, the embedding conditioning mechanisms, the synthetic
//! attribute-controlled corpus, the speaker-recognition backends and the
//! training loops. File formats, configuration and the command line live in
//! the `satforge` crate.
#![cfg_attr(not(test), no_std)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod backends;
pub mod conditioning;
pub mod error;
pub mod fingerprint;
pub mod matrix;
pub mod nn;
pub mod real;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use real::Real;
