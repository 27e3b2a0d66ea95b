//! Molecular communication toolkit.
//!
//! The crate covers the whole receiver chain for concentration shift keying
//! over a diffusion channel:
//!
//! - [`channel`]: closed-form arrival/hitting-time laws and a least-squares
//!   fit of the parametrized arrival model.
//! - [`testbed`]: synthetic sensor traces with inter-symbol interference,
//!   injection jitter, drift and sensor noise.
//! - [`preprocess`]: resampling, smoothing, normalization, symbol
//!   segmentation and the fixed-length segment dataset.
//! - [`nn`]: 1-D convolutional network kernels with hand-chained
//!   backpropagation and Adam.
//! - [`demod`]: the nine-layer CNN demodulator, its training schedule and a
//!   threshold baseline.
//! - [`metrics`]: confusion matrices, offset distributions, bit error rates
//!   and the net data rate bound.

pub mod channel;
pub mod demod;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod testbed;

pub use error::{Error, Result};
