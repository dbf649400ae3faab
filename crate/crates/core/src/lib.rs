//! Unsupervised clustering, diversity pruning, contrastive pretraining and
//! few-shot linear classification for polarimetric SAR coherency scenes.

// Small dense kernels read more clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod classify;
pub mod contrastive;
pub mod diversity;
pub mod error;
pub mod io;
pub mod nn;
pub mod polsar;
pub mod rng;
pub mod wishart;

pub use error::{Error, Result};
