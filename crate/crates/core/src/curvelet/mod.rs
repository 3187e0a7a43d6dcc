//! Wrapping-based fast discrete curvelet transform on a tight frame.

mod geometry;
mod transform;
pub mod window;

pub use geometry::{
    build_geometry, per_scale_angle_counts, signed_freq, CurveletGeometry, FreqRect, WedgeWindow, WindowTap,
    DEFAULT_ANGLES, DEFAULT_NUM_SCALES,
};
pub use transform::{adjoint_check, adjoint_discrepancy, fdct_forward, fdct_inverse, CurveletCoeffs};
