//! Scale bands and their spatial masks.
//!
//! Every band sees all wedges. A fixed 0/1 base mask marks the band's own
//! wedges; a learnable mask, squashed to (-1, 1), is added on top, so a band
//! can attenuate its own wedges or re-admit some content from the others.
//!
//! | band | wedges                          |
//! |------|---------------------------------|
//! | 1    | scales 1 and 2                  |
//! | 2    | scale 3                         |
//! | 3    | scales 4 to the last            |
//! | 4    | everything                      |

use std::sync::Arc;

use ndarray::{Array2, Zip};

use crate::curvelet::{CurveletCoeffs, CurveletGeometry};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::spectral::recompose;

pub const NUM_BANDS: usize = 4;

/// `2 sigmoid(x) - 1`, range (-1, 1).
pub fn scaled_sigmoid(x: f64) -> f64 {
    2.0 * sigmoid(x) - 1.0
}

pub fn scaled_sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    2.0 * s * (1.0 - s)
}

/// Members of one band as 1-based flat wedge indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleBandSpec {
    pub band: usize,
    pub members: Vec<usize>,
}

impl ScaleBandSpec {
    pub fn contains(&self, wedge: usize) -> bool {
        self.members.binary_search(&wedge).is_ok()
    }
}

/// Band membership per scale; scales are 1-based.
pub fn band_of_scale(scale: usize) -> usize {
    match scale {
        1 | 2 => 1,
        3 => 2,
        _ => 3,
    }
}

pub fn band_specs(geometry: &CurveletGeometry) -> Result<Vec<ScaleBandSpec>> {
    if geometry.num_scales() < 3 {
        return Err(Error::GeometryTooShallow(geometry.num_scales()));
    }
    let mut specs: Vec<_> = (1..=NUM_BANDS)
        .map(|band| ScaleBandSpec {
            band,
            members: Vec::new(),
        })
        .collect();
    for w in geometry.wedges() {
        specs[band_of_scale(w.scale) - 1].members.push(w.index);
        specs[NUM_BANDS - 1].members.push(w.index);
    }
    Ok(specs)
}

/// Base and learnable masks for all bands at native wedge resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    specs: Vec<ScaleBandSpec>,
    /// Pre-activation parameters, `params[band - 1][wedge - 1]`.
    pub params: Vec<Vec<Array2<f64>>>,
}

/// Band specs plus a mask set whose learnable part starts at zero.
pub fn build_bands(geometry: &CurveletGeometry) -> Result<(Vec<ScaleBandSpec>, MaskSet)> {
    let specs = band_specs(geometry)?;
    let shapes = geometry.tile_shapes();
    let params = (0..NUM_BANDS)
        .map(|_| shapes.iter().map(|&d| Array2::zeros(d)).collect())
        .collect();
    Ok((specs.clone(), MaskSet { specs, params }))
}

impl MaskSet {
    pub fn new(geometry: &CurveletGeometry) -> Result<Self> {
        build_bands(geometry).map(|(_, m)| m)
    }

    pub fn specs(&self) -> &[ScaleBandSpec] {
        &self.specs
    }

    pub fn num_wedges(&self) -> usize {
        self.params[0].len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            specs: self.specs.clone(),
            params: self
                .params
                .iter()
                .map(|b| b.iter().map(|m| Array2::zeros(m.dim())).collect())
                .collect(),
        }
    }

    /// Value of the constant base mask for `band` (1-based) and wedge (0-based).
    pub fn base(&self, band: usize, wedge: usize) -> f64 {
        if self.specs[band - 1].contains(wedge + 1) {
            1.0
        } else {
            0.0
        }
    }

    /// Number of wedges whose base mask is all ones.
    pub fn ones_count(&self, band: usize) -> usize {
        self.specs[band - 1].members.len()
    }

    /// Effective mask `C = scaled_sigmoid(M) + B`.
    pub fn final_mask(&self, band: usize, wedge: usize) -> Array2<f64> {
        let b = self.base(band, wedge);
        self.params[band - 1][wedge].mapv(|m| scaled_sigmoid(m) + b)
    }

    fn check_band(&self, band: usize) -> Result<()> {
        if (1..=NUM_BANDS).contains(&band) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("band {band} is outside 1..={NUM_BANDS}")))
        }
    }

    fn check_wedges(&self, arrays: &[Array2<f64>]) -> Result<()> {
        if arrays.len() != self.num_wedges() {
            return Err(Error::ShapeMismatch(format!(
                "{} wedge arrays for {} masks",
                arrays.len(),
                self.num_wedges()
            )));
        }
        for (i, (a, m)) in arrays.iter().zip(&self.params[0]).enumerate() {
            if a.dim() != m.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "wedge {}: {:?} vs mask {:?}",
                    i + 1,
                    a.dim(),
                    m.dim()
                )));
            }
        }
        Ok(())
    }

    /// Final masks of one band laid out one scale per row, for viewing.
    pub fn band_mosaic(&self, geometry: &CurveletGeometry, band: usize) -> Array2<f64> {
        let finals: Vec<Array2<f64>> = (0..self.num_wedges()).map(|w| self.final_mask(band, w)).collect();
        let groups: Vec<Vec<&Array2<f64>>> = (1..=geometry.num_scales())
            .map(|s| {
                geometry
                    .wedges()
                    .iter()
                    .filter(|w| w.scale == s)
                    .map(|w| &finals[w.index - 1])
                    .collect()
            })
            .collect();
        crate::pgm::mosaic(&groups, -1.0)
    }
}

/// Element-wise product of every gated wedge with its final mask for `band`.
pub fn modulate(gated: &[Array2<f64>], masks: &MaskSet, band: usize) -> Result<Vec<Array2<f64>>> {
    masks.check_band(band)?;
    masks.check_wedges(gated)?;
    Ok(gated
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let b = masks.base(band, i);
            Zip::from(u)
                .and(&masks.params[band - 1][i])
                .map_collect(|&u, &m| u * (scaled_sigmoid(m) + b))
        })
        .collect())
}

/// Modulated magnitudes with the original phase, ready for the inverse transform.
pub fn recompose_band(
    geometry: &Arc<CurveletGeometry>,
    modulated: &[Array2<f64>],
    phase: &[Array2<f64>],
) -> Result<CurveletCoeffs> {
    recompose(geometry, modulated, phase)
}

/// Gradients of one band's modulation.
pub struct MaskGrads {
    /// Gradient for the band's learnable parameters, one array per wedge.
    pub params: Vec<Array2<f64>>,
    /// Gradient for the gated magnitudes.
    pub gated: Vec<Array2<f64>>,
}

/// Caches the gated magnitudes of a forward pass for [`MaskTape::vjp`].
pub struct MaskTape<'a> {
    masks: &'a MaskSet,
    gated: Option<Vec<Array2<f64>>>,
}

impl<'a> MaskTape<'a> {
    pub fn new(masks: &'a MaskSet) -> Self {
        Self { masks, gated: None }
    }

    /// Modulates for `band` and remembers the input.
    pub fn forward(&mut self, gated: &[Array2<f64>], band: usize) -> Result<Vec<Array2<f64>>> {
        let out = modulate(gated, self.masks, band)?;
        self.gated = Some(gated.to_vec());
        Ok(out)
    }

    /// Accepts the gradient of any band's modulated output; the gated input
    /// is the same for every band.
    pub fn vjp(&self, band: usize, upstream: &[Array2<f64>]) -> Result<MaskGrads> {
        let gated = self.gated.as_ref().ok_or(Error::MissingForwardCache)?;
        mask_vjp(gated, self.masks, band, upstream)
    }
}

/// Chain rule through `U * (scaled_sigmoid(M) + B)`.
pub fn mask_vjp(gated: &[Array2<f64>], masks: &MaskSet, band: usize, upstream: &[Array2<f64>]) -> Result<MaskGrads> {
    masks.check_band(band)?;
    masks.check_wedges(gated)?;
    masks.check_wedges(upstream)?;
    let mut params = Vec::with_capacity(gated.len());
    let mut d_gated = Vec::with_capacity(gated.len());
    for (i, (u, g)) in gated.iter().zip(upstream).enumerate() {
        let m = &masks.params[band - 1][i];
        let b = masks.base(band, i);
        params.push(
            Zip::from(g)
                .and(u)
                .and(m)
                .map_collect(|&g, &u, &m| g * u * scaled_sigmoid_grad(m)),
        );
        d_gated.push(Zip::from(g).and(m).map_collect(|&g, &m| g * (scaled_sigmoid(m) + b)));
    }
    Ok(MaskGrads { params, gated: d_gated })
}
