//! Frequency tiling for the wrapping curvelet transform.
//!
//! The FFT grid is split into `num_scales` dyadic coronae. The innermost
//! scale is a single low-pass tile and the outermost is a single high-pass
//! tile; every intermediate corona is cut into angular wedges. Each wedge
//! window is the product of a radial profile (difference of two separable
//! low-pass windows) and an angular profile, and the squared windows of all
//! wedges add up to one at every grid point.
//!
//! Frequencies use signed indices `k` in `[-floor(n/2), ceil(n/2) - 1]`.
//! Angles are measured counter-clockwise in the `(k_col, k_row)` plane, so
//! angle 0 of each scale is the wedge centred on the positive column-frequency
//! axis.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use ndarray::Array2;
use rustfft::FftPlanner;

use super::window::falling_edge;
use crate::error::{Error, Result};
use crate::fft::Fft2;

pub const DEFAULT_NUM_SCALES: usize = 5;
pub const DEFAULT_ANGLES: usize = 8;

/// Centre of the outermost radial transition, as a fraction of Nyquist.
const FINEST_BOUNDARY_CENTER: f64 = 0.6;
/// Half-width of each radial transition relative to its centre.
const RADIAL_TRANSITION: f64 = 0.15;
/// Half-width of each angular transition relative to the wedge half-angle.
const ANGULAR_TRANSITION: f64 = 0.5;

/// Axis-aligned rectangle of signed frequency indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreqRect {
    pub row0: i64,
    pub col0: i64,
    pub rows: usize,
    pub cols: usize,
}

/// One nonzero window sample: position on the FFT grid, position on the
/// wrapped tile, and the window value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTap {
    pub grid: usize,
    pub tile: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct WedgeWindow {
    /// Flat index, 1-based, scale-major.
    pub index: usize,
    /// Scale, 1-based (1 = coarsest).
    pub scale: usize,
    /// Orientation within the scale, 0-based, counter-clockwise.
    pub angle: usize,
    /// Centre direction in radians for angular wedges.
    pub center_angle: Option<f64>,
    /// Bounding rectangle of the window support.
    pub support: FreqRect,
    /// Wrapping period, which is also the coefficient array shape.
    pub tile: (usize, usize),
    taps: Vec<WindowTap>,
    fft: usize,
}

impl WedgeWindow {
    pub fn taps(&self) -> &[WindowTap] {
        &self.taps
    }

    /// Window samples laid out on the support rectangle.
    pub fn window_on_support(&self, grid_rows: usize, grid_cols: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.support.rows, self.support.cols));
        for tap in &self.taps {
            let kr = signed_freq(tap.grid / grid_cols, grid_rows);
            let kc = signed_freq(tap.grid % grid_cols, grid_cols);
            let r = (kr - self.support.row0) as usize;
            let c = (kc - self.support.col0) as usize;
            out[[r, c]] = tap.weight;
        }
        out
    }
}

/// Immutable frequency-tiling plan shared by forward and inverse transforms.
pub struct CurveletGeometry {
    height: usize,
    width: usize,
    num_scales: usize,
    angles_at_scale2: usize,
    per_scale_angles: Vec<usize>,
    wedges: Vec<WedgeWindow>,
    grid_fft: Fft2,
    tile_ffts: Vec<Fft2>,
}

impl fmt::Debug for CurveletGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CurveletGeometry")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("num_scales", &self.num_scales)
            .field("per_scale_angles", &self.per_scale_angles)
            .finish()
    }
}

/// Signed frequency of FFT bin `i` on an axis of length `n`.
pub fn signed_freq(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Wedge counts per scale: `[1, A, 2A, 2A, 4A, 4A, ..., 1]`.
pub fn per_scale_angle_counts(num_scales: usize, angles_at_scale2: usize) -> Vec<usize> {
    (1..=num_scales)
        .map(|s| {
            if s == 1 || s == num_scales {
                1
            } else {
                angles_at_scale2 << (s - 2).div_ceil(2)
            }
        })
        .collect()
}

fn validate(height: usize, width: usize, num_scales: usize, angles_at_scale2: usize) -> Result<()> {
    if num_scales < 3 {
        return Err(Error::TooFewScales(num_scales));
    }
    let min = 1usize
        .checked_shl(num_scales as u32)
        .filter(|_| num_scales < usize::BITS as usize)
        .unwrap_or(usize::MAX);
    if height < min || width < min {
        return Err(Error::DimensionTooSmall {
            height,
            width,
            num_scales,
            min,
        });
    }
    if angles_at_scale2 == 0 || !angles_at_scale2.is_multiple_of(4) {
        return Err(Error::BadAngleCount(angles_at_scale2));
    }
    Ok(())
}

/// 1D low-pass profile for every radial boundary, sampled on an axis of length `n`.
/// Boundary `b` (0-based) separates scale `b + 1` from scale `b + 2`.
fn lowpass_tables(n: usize, num_scales: usize) -> Vec<Vec<f64>> {
    let nyquist = n as f64 / 2.0;
    (0..num_scales - 1)
        .map(|b| {
            let center = FINEST_BOUNDARY_CENTER / (1u64 << (num_scales - 2 - b)) as f64;
            let lo = center * (1.0 - RADIAL_TRANSITION);
            let hi = center * (1.0 + RADIAL_TRANSITION);
            (0..n)
                .map(|i| falling_edge(signed_freq(i, n).unsigned_abs() as f64 / nyquist, lo, hi))
                .collect()
        })
        .collect()
}

fn angular_weight(theta: f64, center: f64, count: usize) -> f64 {
    let mut d = (theta - center) % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d <= -PI {
        d += 2.0 * PI;
    }
    let half = PI / count as f64;
    let delta = ANGULAR_TRANSITION * half;
    falling_edge(d.abs(), half - delta, half + delta)
}

struct RawTap {
    kr: i64,
    kc: i64,
    grid: usize,
    weight: f64,
}

/// Smallest wrapping period that keeps the support injective: either wrap
/// rows by the largest per-column extent or wrap columns by the largest
/// per-row extent.
fn wrap_period(taps: &[RawTap], rect: &FreqRect) -> (usize, usize) {
    let mut col_ext: BTreeMap<i64, (i64, i64)> = BTreeMap::new();
    let mut row_ext: BTreeMap<i64, (i64, i64)> = BTreeMap::new();
    for t in taps {
        let e = col_ext.entry(t.kc).or_insert((t.kr, t.kr));
        e.0 = e.0.min(t.kr);
        e.1 = e.1.max(t.kr);
        let e = row_ext.entry(t.kr).or_insert((t.kc, t.kc));
        e.0 = e.0.min(t.kc);
        e.1 = e.1.max(t.kc);
    }
    let max_ext = |m: &BTreeMap<i64, (i64, i64)>| m.values().map(|(lo, hi)| (hi - lo + 1) as usize).max().unwrap_or(1);
    let wrap_rows = (max_ext(&col_ext), rect.cols);
    let wrap_cols = (rect.rows, max_ext(&row_ext));
    if wrap_cols.0 * wrap_cols.1 < wrap_rows.0 * wrap_rows.1 {
        wrap_cols
    } else {
        wrap_rows
    }
}

impl CurveletGeometry {
    /// Builds the tiling for a `height x width` grid.
    pub fn new(height: usize, width: usize, num_scales: usize, angles_at_scale2: usize) -> Result<Self> {
        validate(height, width, num_scales, angles_at_scale2)?;
        let per_scale_angles = per_scale_angle_counts(num_scales, angles_at_scale2);
        let low_r = lowpass_tables(height, num_scales);
        let low_c = lowpass_tables(width, num_scales);
        let kr: Vec<i64> = (0..height).map(|i| signed_freq(i, height)).collect();
        let kc: Vec<i64> = (0..width).map(|j| signed_freq(j, width)).collect();

        let mut planner = FftPlanner::new();
        let grid_fft = Fft2::new(&mut planner, height, width);
        let mut plan_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut tile_ffts = Vec::new();
        let mut wedges = Vec::new();

        for (s_idx, &count) in per_scale_angles.iter().enumerate() {
            let scale = s_idx + 1;
            let mut raw: Vec<Vec<RawTap>> = (0..count).map(|_| Vec::new()).collect();
            for i in 0..height {
                for j in 0..width {
                    let lowpass = |b: usize| low_r[b][i] * low_c[b][j];
                    let radial = if scale == 1 {
                        lowpass(0)
                    } else if scale == num_scales {
                        let outer = lowpass(num_scales - 2);
                        (1.0 - outer * outer).max(0.0).sqrt()
                    } else {
                        let outer = lowpass(scale - 1);
                        let inner = lowpass(scale - 2);
                        (outer * outer - inner * inner).max(0.0).sqrt()
                    };
                    if radial <= 0.0 {
                        continue;
                    }
                    let grid = i * width + j;
                    if count == 1 {
                        raw[0].push(RawTap {
                            kr: kr[i],
                            kc: kc[j],
                            grid,
                            weight: radial,
                        });
                        continue;
                    }
                    let theta = (kr[i] as f64).atan2(kc[j] as f64);
                    for (a, taps) in raw.iter_mut().enumerate() {
                        let center = 2.0 * PI * a as f64 / count as f64;
                        let w = angular_weight(theta, center, count);
                        if w > 0.0 {
                            taps.push(RawTap {
                                kr: kr[i],
                                kc: kc[j],
                                grid,
                                weight: radial * w,
                            });
                        }
                    }
                }
            }

            for (angle, taps) in raw.into_iter().enumerate() {
                if taps.is_empty() {
                    return Err(Error::ShapeMismatch(format!(
                        "{height}x{width} grid leaves wedge (scale {scale}, angle {angle}) empty"
                    )));
                }
                let (r0, r1) = taps
                    .iter()
                    .fold((i64::MAX, i64::MIN), |(a, b), t| (a.min(t.kr), b.max(t.kr)));
                let (c0, c1) = taps
                    .iter()
                    .fold((i64::MAX, i64::MIN), |(a, b), t| (a.min(t.kc), b.max(t.kc)));
                let support = FreqRect {
                    row0: r0,
                    col0: c0,
                    rows: (r1 - r0 + 1) as usize,
                    cols: (c1 - c0 + 1) as usize,
                };
                let tile = wrap_period(&taps, &support);
                let fft = *plan_ids.entry(tile).or_insert_with(|| {
                    tile_ffts.push(Fft2::new(&mut planner, tile.0, tile.1));
                    tile_ffts.len() - 1
                });
                let taps = taps
                    .iter()
                    .map(|t| WindowTap {
                        grid: t.grid,
                        tile: t.kr.rem_euclid(tile.0 as i64) as usize * tile.1
                            + t.kc.rem_euclid(tile.1 as i64) as usize,
                        weight: t.weight,
                    })
                    .collect();
                wedges.push(WedgeWindow {
                    index: wedges.len() + 1,
                    scale,
                    angle,
                    center_angle: (count > 1).then(|| 2.0 * PI * angle as f64 / count as f64),
                    support,
                    tile,
                    taps,
                    fft,
                });
            }
        }

        Ok(Self {
            height,
            width,
            num_scales,
            angles_at_scale2,
            per_scale_angles,
            wedges,
            grid_fft,
            tile_ffts,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn angles_at_scale2(&self) -> usize {
        self.angles_at_scale2
    }

    pub fn per_scale_angles(&self) -> &[usize] {
        &self.per_scale_angles
    }

    pub fn num_wedges(&self) -> usize {
        self.wedges.len()
    }

    pub fn wedges(&self) -> &[WedgeWindow] {
        &self.wedges
    }

    /// Wedge by 1-based flat index.
    pub fn wedge(&self, index: usize) -> Option<&WedgeWindow> {
        index.checked_sub(1).and_then(|i| self.wedges.get(i))
    }

    /// 0-based position of `(scale, angle)` in the flat wedge list.
    pub fn position(&self, scale: usize, angle: usize) -> Option<usize> {
        if scale == 0 || scale > self.num_scales || angle >= self.per_scale_angles[scale - 1] {
            return None;
        }
        Some(self.per_scale_angles[..scale - 1].iter().sum::<usize>() + angle)
    }

    /// Shapes of the coefficient arrays, in flat order.
    pub fn tile_shapes(&self) -> Vec<(usize, usize)> {
        self.wedges.iter().map(|w| w.tile).collect()
    }

    /// Sum of squared windows over all wedges, on the FFT grid (FFT order).
    pub fn squared_window_sum(&self) -> Array2<f64> {
        let mut acc = vec![0.0; self.height * self.width];
        for w in &self.wedges {
            for t in &w.taps {
                acc[t.grid] += t.weight * t.weight;
            }
        }
        Array2::from_shape_vec((self.height, self.width), acc).expect("grid shape")
    }

    pub(crate) fn grid_fft(&self) -> &Fft2 {
        &self.grid_fft
    }

    pub(crate) fn tile_fft(&self, wedge: &WedgeWindow) -> &Fft2 {
        &self.tile_ffts[wedge.fft]
    }
}

/// Convenience constructor matching the library's default configuration
/// (5 scales, 8 angles at the first directional scale).
pub fn build_geometry(
    height: usize,
    width: usize,
    num_scales: usize,
    angles_at_scale2: usize,
) -> Result<CurveletGeometry> {
    CurveletGeometry::new(height, width, num_scales, angles_at_scale2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_ladder() {
        assert_eq!(per_scale_angle_counts(5, 8), vec![1, 8, 16, 16, 1]);
        assert_eq!(per_scale_angle_counts(4, 8), vec![1, 8, 16, 1]);
        assert_eq!(per_scale_angle_counts(3, 8), vec![1, 8, 1]);
        assert_eq!(per_scale_angle_counts(6, 4), vec![1, 4, 8, 8, 16, 1]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            CurveletGeometry::new(31, 64, 5, 8),
            Err(Error::DimensionTooSmall { min: 32, .. })
        ));
        assert_eq!(
            CurveletGeometry::new(64, 64, 4, 6).unwrap_err(),
            Error::BadAngleCount(6)
        );
        assert_eq!(
            CurveletGeometry::new(64, 64, 4, 0).unwrap_err(),
            Error::BadAngleCount(0)
        );
        assert_eq!(CurveletGeometry::new(64, 64, 2, 8).unwrap_err(), Error::TooFewScales(2));
    }

    #[test]
    fn wedge_counts() {
        assert_eq!(CurveletGeometry::new(64, 64, 4, 8).unwrap().num_wedges(), 26);
        assert_eq!(CurveletGeometry::new(8, 8, 3, 8).unwrap().num_wedges(), 10);
    }

    #[test]
    fn flat_index_is_scale_major_ccw() {
        let g = CurveletGeometry::new(64, 64, 4, 8).unwrap();
        let w = g.wedges();
        assert_eq!((w[0].scale, w[0].angle), (1, 0));
        assert_eq!((w[1].scale, w[1].angle, w[1].center_angle), (2, 0, Some(0.0)));
        assert_eq!((w[9].scale, w[9].angle), (3, 0));
        assert_eq!((w[25].scale, w[25].angle), (4, 0));
        assert_eq!(g.position(3, 0), Some(9));
        assert_eq!(g.position(3, 16), None);
        assert_eq!(g.wedge(26).unwrap().index, 26);
        assert!(g.wedge(0).is_none());
        // Wedge 0 of a directional scale is centred on the +column-frequency axis
        // and its bounding box therefore lies to the right of the origin.
        assert!(w[9].support.col0 > 0);
        // A quarter turn later the wedge sits on the +row-frequency axis.
        assert!(w[9 + 4].support.row0 > 0);
    }

    #[test]
    fn partition_of_unity_on_many_grids() {
        for &(h, w, j) in &[(8, 8, 3), (9, 13, 3), (16, 16, 3), (33, 40, 5), (64, 64, 4)] {
            let g = CurveletGeometry::new(h, w, j, 8).unwrap();
            let dev = g
                .squared_window_sum()
                .iter()
                .map(|v| (v - 1.0).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-12, "{h}x{w}/{j}: {dev}");
        }
    }

    #[test]
    fn wrapping_is_injective() {
        let g = CurveletGeometry::new(40, 37, 4, 8).unwrap();
        for w in g.wedges() {
            let mut seen = vec![false; w.tile.0 * w.tile.1];
            for t in w.taps() {
                assert!(!seen[t.tile], "collision in wedge {}", w.index);
                seen[t.tile] = true;
            }
        }
    }

    #[test]
    fn directional_tiles_wrap_below_bounding_box() {
        let g = CurveletGeometry::new(128, 128, 5, 8).unwrap();
        let wrapped = g
            .wedges()
            .iter()
            .filter(|w| w.tile.0 * w.tile.1 < w.support.rows * w.support.cols)
            .count();
        assert!(wrapped > 0);
    }
}
