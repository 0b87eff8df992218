//! Frequency-event detection in sensor time series.
//!
//! Signals are transformed into Gabor-wavelet scalograms ([`wavelet`]),
//! band-filtered ([`bandfilter`]), searched for event blobs ([`detector`]),
//! and the resulting pixel boxes are projected back onto the time axis
//! ([`mapback`]). [`metrics`] scores predictions against ground truth and
//! [`synth`] produces labelled synthetic recordings.

pub mod bandfilter;
pub mod detector;
pub mod error;
pub mod mapback;
pub mod metrics;
pub mod pipeline;
pub mod scalogram;
pub mod synth;
pub mod timeseries;
pub mod wavelet;

pub use error::{Error, Result};
