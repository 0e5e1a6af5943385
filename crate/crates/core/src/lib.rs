//! Adaptive high-frequency preprocessing for video coding.
//!
//! The crate pseudo-labels videos with the unsharp-mask strength that gives
//! the best quality at a target bitrate, trains a frequency-attentive
//! pyramid network to predict that strength from raw frames, and applies
//! the predicted filter before encoding.

pub mod config;
pub mod error;
pub mod filters;
pub mod frame_io;
pub mod labeler;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sampling;
pub mod seed;

pub use error::{ConfigError, FilterError, LabelError, MetricError, ModelError, NnError, SampleError, VideoError};
