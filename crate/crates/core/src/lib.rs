//! Curvelet-domain feature enhancement: a tight-frame curvelet transform,
//! per-wedge attention gates, scale-band spatial masks, an adaptive gate
//! sparsity penalty and the reconstruction of twelve enhanced feature maps
//! per RGB image, with a small end-to-end trainer around them.

pub mod container;
pub mod curvelet;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pgm;
pub mod pipeline;
pub mod regularizer;
pub mod scale_masks;
pub mod spectral;
pub mod train;
pub mod wedge_gate;

pub use error::{Error, Result};
