//! Per-channel enhancement and assembly of the 12-map stack.
//!
//! For one colour channel: forward transform, split into magnitude and
//! phase, gate the magnitudes, modulate them once per band, put the
//! original phase back and invert. The three colour channels share the
//! gating network and the masks.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4, Axis, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::curvelet::{fdct_forward, fdct_inverse, CurveletCoeffs, CurveletGeometry};
use crate::error::{Error, Result};
use crate::params::{Parameters, TensorVisitor};
use crate::scale_masks::{MaskSet, MaskTape, NUM_BANDS};
use crate::spectral::decompose;
use crate::wedge_gate::{GateMode, GateTape, GateVector, WedgeSe, DEFAULT_HIDDEN};

pub const NUM_COLOURS: usize = 3;
pub const STACK_CHANNELS: usize = NUM_COLOURS * NUM_BANDS;

/// Twelve real maps in the order R·band1..band4, G·band1..band4, B·band1..band4.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedStack {
    pub data: Array3<f64>,
}

impl EnhancedStack {
    /// Index of the map for `colour` (0-based) and `band` (1-based).
    pub fn slot(colour: usize, band: usize) -> usize {
        colour * NUM_BANDS + band - 1
    }

    pub fn map(&self, colour: usize, band: usize) -> ndarray::ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), Self::slot(colour, band))
    }
}

/// Everything learnable in the enhancement stage, plus its geometry.
#[derive(Debug, Clone)]
pub struct FeatureEnhancer {
    pub geometry: Arc<CurveletGeometry>,
    pub se: WedgeSe,
    pub masks: MaskSet,
}

/// Four band maps and the gate vector of one channel.
#[derive(Debug, Clone)]
pub struct ChannelOutput {
    pub maps: Vec<Array2<f64>>,
    pub gates: GateVector,
}

impl FeatureEnhancer {
    /// All gates open, all masks equal to their base; the band-4 map then
    /// reproduces the input.
    pub fn neutral(geometry: Arc<CurveletGeometry>) -> Result<Self> {
        let masks = MaskSet::new(&geometry)?;
        let se = WedgeSe::zeros(geometry.num_wedges(), DEFAULT_HIDDEN);
        Ok(Self { geometry, se, masks })
    }

    /// Random squeeze and first MLP layer; output layer and masks at zero,
    /// so the initial forward pass is still neutral.
    pub fn init<R: rand::Rng>(geometry: Arc<CurveletGeometry>, hidden: usize, rng: &mut R) -> Result<Self> {
        let masks = MaskSet::new(&geometry)?;
        let se = WedgeSe::init(geometry.num_wedges(), hidden, rng);
        Ok(Self { geometry, se, masks })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            geometry: Arc::clone(&self.geometry),
            se: self.se.zeros_like(),
            masks: self.masks.zeros_like(),
        }
    }

    pub fn enhance_channel(&self, channel: &Array2<f64>) -> Result<ChannelOutput> {
        let (tape, maps) = ChannelTape::forward(self, channel, GateMode::Binary)?;
        Ok(ChannelOutput {
            maps,
            gates: tape.gates,
        })
    }

    /// Accepts `(3, H, W)`.
    pub fn enhance_image(&self, rgb: &Array3<f64>) -> Result<EnhancedStack> {
        self.enhance_image_with_gates(rgb).map(|(s, _)| s)
    }

    pub fn enhance_image_with_gates(&self, rgb: &Array3<f64>) -> Result<(EnhancedStack, Vec<GateVector>)> {
        check_rgb(rgb)?;
        let outs = (0..NUM_COLOURS)
            .into_par_iter()
            .map(|c| self.enhance_channel(&rgb.index_axis(Axis(0), c).to_owned()))
            .collect::<Result<Vec<_>>>()?;
        let (h, w) = (rgb.dim().1, rgb.dim().2);
        let mut data = Array3::zeros((STACK_CHANNELS, h, w));
        let mut gates = Vec::with_capacity(NUM_COLOURS);
        for (c, out) in outs.into_iter().enumerate() {
            for (b, m) in out.maps.iter().enumerate() {
                data.index_axis_mut(Axis(0), EnhancedStack::slot(c, b + 1)).assign(m);
            }
            gates.push(out.gates);
        }
        Ok((EnhancedStack { data }, gates))
    }
}

fn check_rgb(rgb: &Array3<f64>) -> Result<()> {
    if rgb.dim().0 != NUM_COLOURS {
        return Err(Error::BadChannelCount {
            expected: NUM_COLOURS,
            got: rgb.dim().0,
        });
    }
    Ok(())
}

impl Parameters for FeatureEnhancer {
    fn visit(&self, f: &mut TensorVisitor) {
        self.se.visit(f);
        for (b, band) in self.masks.params.iter().enumerate() {
            for (w, m) in band.iter().enumerate() {
                f(
                    &format!("mask.{}.{}", b + 1, w + 1),
                    m.shape(),
                    m.as_slice().expect("contiguous"),
                );
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.se.visit_mut(f);
        for (b, band) in self.masks.params.iter_mut().enumerate() {
            for (w, m) in band.iter_mut().enumerate() {
                f(
                    &format!("mask.{}.{}", b + 1, w + 1),
                    m.as_slice_mut().expect("contiguous"),
                );
            }
        }
    }
}

/// Forward cache of one channel.
pub struct ChannelTape<'a> {
    enhancer: &'a FeatureEnhancer,
    gate: GateTape<'a>,
    mask: MaskTape<'a>,
    /// `e^{i theta}` per coefficient, shared by all bands.
    unit: Vec<Array2<Complex64>>,
    pub gates: GateVector,
}

impl<'a> ChannelTape<'a> {
    /// Returns the tape and the four band maps.
    pub fn forward(
        enhancer: &'a FeatureEnhancer,
        channel: &Array2<f64>,
        mode: GateMode,
    ) -> Result<(Self, Vec<Array2<f64>>)> {
        let geometry = &enhancer.geometry;
        let mp = decompose(&fdct_forward(channel, geometry)?);
        let mut gate = GateTape::new(&enhancer.se, mode);
        let (gates, gated) = gate.forward(&mp.magnitude, geometry.dims())?;
        let unit: Vec<Array2<Complex64>> = mp
            .phase
            .iter()
            .map(|p| p.mapv(|t| Complex64::from_polar(1.0, t)))
            .collect();
        let mut mask = MaskTape::new(&enhancer.masks);
        let mut maps = Vec::with_capacity(NUM_BANDS);
        for band in 1..=NUM_BANDS {
            let modulated = mask.forward(&gated, band)?;
            let wedges = modulated
                .iter()
                .zip(&unit)
                .map(|(m, u)| Zip::from(m).and(u).map_collect(|&m, &u| u * m))
                .collect();
            maps.push(fdct_inverse(&CurveletCoeffs::new(Arc::clone(geometry), wedges)?)?);
        }
        let tape = Self {
            enhancer,
            gate,
            mask,
            unit,
            gates,
        };
        Ok((tape, maps))
    }

    /// Accumulates parameter gradients into `grads` given the gradient of
    /// each band map and an optional direct gradient on the gate scores.
    pub fn backward(
        &self,
        d_maps: &[Array2<f64>],
        d_scores: Option<&[f64]>,
        grads: &mut FeatureEnhancer,
    ) -> Result<()> {
        if d_maps.len() != NUM_BANDS {
            return Err(Error::ShapeMismatch(format!(
                "{} band gradients, expected {NUM_BANDS}",
                d_maps.len()
            )));
        }
        let geometry = &self.enhancer.geometry;
        let mut d_gated: Vec<Array2<f64>> = geometry.tile_shapes().into_iter().map(Array2::zeros).collect();
        for (band, d_map) in (1..=NUM_BANDS).zip(d_maps) {
            // The inverse transform's adjoint is the forward transform.
            let d_coeffs = fdct_forward(d_map, geometry)?;
            let d_mod: Vec<Array2<f64>> = d_coeffs
                .wedges()
                .iter()
                .zip(&self.unit)
                .map(|(g, u)| Zip::from(g).and(u).map_collect(|&g, &u| g.re * u.re + g.im * u.im))
                .collect();
            let mg = self.mask.vjp(band, &d_mod)?;
            for (acc, g) in grads.masks.params[band - 1].iter_mut().zip(&mg.params) {
                *acc += g;
            }
            for (acc, g) in d_gated.iter_mut().zip(&mg.gated) {
                *acc += g;
            }
        }
        let gg = self.gate.vjp(&d_gated, d_scores)?;
        grads.se.add_scaled(&gg.params, 1.0);
        Ok(())
    }
}

/// Gradient of a real loss with respect to `m` in `z = m e^{i t}`, given
/// the complex gradient `g` with respect to `z`: `Re(e^{-i t} g)`.
pub fn magnitude_grad(g: Complex64, t: f64) -> f64 {
    g.re * t.cos() + g.im * t.sin()
}

/// Repeats each RGB input slice four times: `(out, 3, k, k)` becomes
/// `(out, 12, k, k)` in R,R,R,R,G,G,G,G,B,B,B,B order.
pub fn inflate_first_conv(weights: &Array4<f64>) -> Result<Array4<f64>> {
    let (out, cin, kh, kw) = weights.dim();
    if cin != NUM_COLOURS {
        return Err(Error::BadChannelCount {
            expected: NUM_COLOURS,
            got: cin,
        });
    }
    let mut inflated = Array4::zeros((out, STACK_CHANNELS, kh, kw));
    for c in 0..STACK_CHANNELS {
        inflated
            .slice_mut(s![.., c, .., ..])
            .assign(&weights.slice(s![.., c / NUM_BANDS, .., ..]));
    }
    Ok(inflated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{conv2d_forward, ConvShape};
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: &Array2<f64>, b: ndarray::ArrayView2<f64>) -> f64 {
        (a - &b).mapv(|v| v * v).sum().sqrt() / b.mapv(|v| v * v).sum().sqrt()
    }

    fn image(seed: u64, h: usize, w: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn neutral_identity_and_additivity() {
        let geo = Arc::new(CurveletGeometry::new(40, 36, 4, 8).unwrap());
        let enh = FeatureEnhancer::neutral(geo).unwrap();
        let rgb = image(3, 40, 36);
        let stack = enh.enhance_image(&rgb).unwrap();
        for c in 0..3 {
            let x = rgb.index_axis(Axis(0), c);
            assert!(rel(&stack.map(c, 4).to_owned(), x) < 1e-12);
            let sum = &stack.map(c, 1) + &stack.map(c, 2) + stack.map(c, 3);
            assert!(rel(&sum, stack.map(c, 4)) < 1e-12);
        }
    }

    #[test]
    fn zero_and_permuted_inputs() {
        let geo = Arc::new(CurveletGeometry::new(32, 32, 3, 8).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enh = FeatureEnhancer::init(geo, 6, &mut rng).unwrap();
        let zero = enh.enhance_channel(&Array2::zeros((32, 32))).unwrap();
        assert!(zero.maps.iter().all(|m| m.iter().all(|v| *v == 0.0)));

        let rgb = image(5, 32, 32);
        let mut bgr = rgb.clone();
        bgr.index_axis_mut(Axis(0), 0).assign(&rgb.index_axis(Axis(0), 2));
        bgr.index_axis_mut(Axis(0), 2).assign(&rgb.index_axis(Axis(0), 0));
        let a = enh.enhance_image(&rgb).unwrap();
        let b = enh.enhance_image(&bgr).unwrap();
        for band in 1..=4 {
            assert_eq!(a.map(0, band), b.map(2, band));
            assert_eq!(a.map(1, band), b.map(1, band));
        }
        assert!(matches!(
            enh.enhance_image(&Array3::zeros((2, 32, 32))),
            Err(Error::BadChannelCount { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn magnitude_gradient_at_zero_phase_is_real_part() {
        let g = Complex64::new(0.7, -2.0);
        assert_eq!(magnitude_grad(g, 0.0), 0.7);
    }

    #[test]
    fn inflation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Array4::from_shape_fn((1, 3, 5, 5), |_| rng.random_range(-1.0..1.0));
        let inflated = inflate_first_conv(&w).unwrap();
        for c in 0..4 {
            assert_eq!(inflated.slice(s![.., c, .., ..]), w.slice(s![.., 0, .., ..]));
        }
        let x = Array3::from_shape_fn((3, 9, 9), |_| rng.random::<f64>());
        let x12 = Array3::from_shape_fn((12, 9, 9), |(c, i, j)| x[[c / 4, i, j]]);
        let shape = ConvShape {
            kernel: 5,
            stride: 1,
            pad: 2,
        };
        let b = Array1::zeros(1);
        let y = conv2d_forward(x.view(), &w, &b, shape);
        let y12 = conv2d_forward(x12.view(), &inflated, &b, shape);
        assert!(Zip::from(&y)
            .and(&y12)
            .all(|a, b| (4.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300)));
        assert!(inflate_first_conv(&Array4::zeros((2, 4, 3, 3))).is_err());
        assert!(inflate_first_conv(&Array4::zeros((2, 3, 3, 3)))
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }
}
