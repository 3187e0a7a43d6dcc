//! Smooth step and edge profiles used to build the frequency windows.

use std::f64::consts::FRAC_PI_2;

/// Polynomial step `t^4 (35 - 84 t + 70 t^2 - 20 t^3)`, clamped to `[0, 1]`.
///
/// Satisfies `step(t) + step(1 - t) = 1`, which is what makes adjacent
/// cosine/sine edges square-sum to one.
pub fn meyer_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let t2 = t * t;
        t2 * t2 * (35.0 - 84.0 * t + 70.0 * t2 - 20.0 * t2 * t)
    }
}

/// Falling edge: exactly 1 for `x <= lo`, exactly 0 for `x >= hi`,
/// `cos(pi/2 * step((x - lo) / (hi - lo)))` in between.
pub fn falling_edge(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo {
        1.0
    } else if x >= hi {
        0.0
    } else {
        (FRAC_PI_2 * meyer_step((x - lo) / (hi - lo))).cos()
    }
}
