//! Wedge-level squeeze-and-excitation with binary gates.
//!
//! Each wedge magnitude array is resampled to the image grid and run through
//! its own chain of strided depthwise convolutions down to a 4x4 map, which
//! is averaged into one descriptor per wedge. A two-layer MLP turns the
//! descriptors into sigmoid scores; scores at or above 0.5 open the gate.
//! Gates multiply the magnitudes at their native resolution, so the
//! reconstruction path never sees resampled data.
//!
//! On the backward pass the threshold is treated as the identity
//! (straight-through), so gradients reach the scores and everything behind
//! them.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::Uniform;

use crate::error::{Error, Result};
use crate::nn::{
    adaptive_avg_pool_backward, adaptive_avg_pool_forward, bilinear_backward, bilinear_forward, depthwise_backward,
    depthwise_forward, linear_backward, linear_forward, sigmoid, ConvShape, Resample1d,
};
use crate::params::{slice, slice_mut, Parameters, TensorVisitor};

pub const SQUEEZE_KERNELS: [usize; 6] = [5, 5, 3, 3, 3, 3];
pub const SQUEEZE_PADS: [usize; 6] = [1, 1, 1, 1, 0, 0];
pub const SQUEEZE_STRIDE: usize = 2;
/// Side of the map that is globally averaged into the wedge descriptor.
pub const POOL_SIDE: usize = 4;
/// A layer only runs while the smaller spatial side is at least this large.
pub const MIN_CONV_INPUT: usize = 8;
pub const GATE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_HIDDEN: usize = 16;

pub fn layer_shape(layer: usize) -> ConvShape {
    ConvShape {
        kernel: SQUEEZE_KERNELS[layer],
        stride: SQUEEZE_STRIDE,
        pad: SQUEEZE_PADS[layer],
    }
}

/// Spatial sizes after each convolution that runs on an `h x w` input.
/// If the last entry is not 4x4, adaptive pooling brings it there.
pub fn squeeze_trace(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut dims = (h, w);
    let mut trace = Vec::new();
    for layer in 0..SQUEEZE_KERNELS.len() {
        if dims.0.min(dims.1) < MIN_CONV_INPUT {
            break;
        }
        dims = layer_shape(layer).out_dims(dims.0, dims.1);
        trace.push(dims);
    }
    trace
}

pub fn binary_threshold(score: f64) -> u8 {
    u8::from(score >= GATE_THRESHOLD)
}

/// How gate values enter the data path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    /// Hard 0/1 gates, straight-through gradients.
    #[default]
    Binary,
    /// Gates equal the continuous scores. Used to check gradients by finite
    /// differences, since the hard threshold has no useful derivative.
    Soft,
}

/// Per-wedge scores in (0, 1) and their thresholded gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector {
    pub scores: Vec<f64>,
    pub gates: Vec<u8>,
}

impl GateVector {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let gates = scores.iter().map(|&s| binary_threshold(s)).collect();
        Self { scores, gates }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.gates.iter().map(|&g| g as usize).sum()
    }

    pub fn score_sum(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Factor applied to each wedge in the given mode.
    pub fn multipliers(&self, mode: GateMode) -> Vec<f64> {
        match mode {
            GateMode::Binary => self.gates.iter().map(|&g| g as f64).collect(),
            GateMode::Soft => self.scores.clone(),
        }
    }
}

/// Six depthwise layers, one filter per wedge.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeStack {
    pub weights: Vec<Array3<f64>>,
    pub biases: Vec<Array1<f64>>,
}

pub struct SqueezeCache {
    mag_shapes: Vec<(usize, usize)>,
    grid: (usize, usize),
    layer_inputs: Vec<Array3<f64>>,
    final_dims: (usize, usize),
}

impl SqueezeStack {
    pub fn zeros(num_wedges: usize) -> Self {
        Self {
            weights: SQUEEZE_KERNELS
                .iter()
                .map(|&k| Array3::zeros((num_wedges, k, k)))
                .collect(),
            biases: SQUEEZE_KERNELS.iter().map(|_| Array1::zeros(num_wedges)).collect(),
        }
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init<R: Rng>(num_wedges: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(num_wedges);
        for (w, &k) in s.weights.iter_mut().zip(&SQUEEZE_KERNELS) {
            let bound = (3.0 / (k * k) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            w.mapv_inplace(|_| rng.sample(dist));
        }
        s
    }

    pub fn num_wedges(&self) -> usize {
        self.biases[0].len()
    }

    /// Identity-like kernels (centre tap 1) and zero biases; handy for tests.
    pub fn centre_tap(num_wedges: usize) -> Self {
        let mut s = Self::zeros(num_wedges);
        for (w, &k) in s.weights.iter_mut().zip(&SQUEEZE_KERNELS) {
            w.slice_mut(s![.., k / 2, k / 2]).fill(1.0);
        }
        s
    }

    /// One descriptor per wedge.
    pub fn forward(&self, mags: &[Array2<f64>], grid: (usize, usize)) -> Result<(Vec<f64>, SqueezeCache)> {
        let n = self.num_wedges();
        if mags.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} wedges for a {n}-wedge squeeze stack",
                mags.len()
            )));
        }
        let mut x = Array3::zeros((n, grid.0, grid.1));
        for (i, m) in mags.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::ShapeMismatch(format!("wedge {} is empty", i + 1)));
            }
            let rows = Resample1d::new(m.nrows(), grid.0);
            let cols = Resample1d::new(m.ncols(), grid.1);
            x.slice_mut(s![i, .., ..]).assign(&bilinear_forward(m, &rows, &cols));
        }
        let trace = squeeze_trace(grid.0, grid.1);
        let mut layer_inputs = Vec::with_capacity(trace.len());
        for layer in 0..trace.len() {
            let y = depthwise_forward(
                x.view(),
                self.weights[layer].view(),
                self.biases[layer].view(),
                layer_shape(layer),
            );
            layer_inputs.push(x);
            x = y;
        }
        let final_dims = (x.dim().1, x.dim().2);
        let pooled_map = if final_dims == (POOL_SIDE, POOL_SIDE) {
            x
        } else {
            adaptive_avg_pool_forward(x.view(), POOL_SIDE, POOL_SIDE)
        };
        let pooled = pooled_map
            .axis_iter(Axis(0))
            .map(|m| m.sum() / (POOL_SIDE * POOL_SIDE) as f64)
            .collect();
        let cache = SqueezeCache {
            mag_shapes: mags.iter().map(|m| m.dim()).collect(),
            grid,
            layer_inputs,
            final_dims,
        };
        Ok((pooled, cache))
    }

    /// Returns gradients for the input magnitudes and for this stack.
    pub fn backward(&self, cache: &SqueezeCache, d_pooled: &[f64]) -> (Vec<Array2<f64>>, SqueezeStack) {
        let n = self.num_wedges();
        let area = (POOL_SIDE * POOL_SIDE) as f64;
        let d_map = Array3::from_shape_fn((n, POOL_SIDE, POOL_SIDE), |(c, _, _)| d_pooled[c] / area);
        let mut g = if cache.final_dims == (POOL_SIDE, POOL_SIDE) {
            d_map
        } else {
            adaptive_avg_pool_backward(d_map.view(), cache.final_dims.0, cache.final_dims.1)
        };
        let mut grads = SqueezeStack::zeros(n);
        for layer in (0..cache.layer_inputs.len()).rev() {
            let lg = depthwise_backward(
                cache.layer_inputs[layer].view(),
                self.weights[layer].view(),
                g.view(),
                layer_shape(layer),
            );
            grads.weights[layer] = lg.weight;
            grads.biases[layer] = lg.bias;
            g = lg.input;
        }
        let d_mags = cache
            .mag_shapes
            .iter()
            .enumerate()
            .map(|(i, &(h, w))| {
                let rows = Resample1d::new(h, cache.grid.0);
                let cols = Resample1d::new(w, cache.grid.1);
                bilinear_backward(&g.slice(s![i, .., ..]).to_owned(), &rows, &cols)
            })
            .collect();
        (d_mags, grads)
    }
}

/// `sigmoid(W2 relu(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExciteMlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub struct ExciteCache {
    input: Array1<f64>,
    pre: Array1<f64>,
    hidden: Array1<f64>,
    scores: Array1<f64>,
}

impl ExciteMlp {
    pub fn zeros(num_wedges: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, num_wedges)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((num_wedges, hidden)),
            b2: Array1::zeros(num_wedges),
        }
    }

    /// Fan-in scaled first layer; the output layer starts at zero so every
    /// initial score is exactly 0.5 and every gate starts open.
    pub fn init<R: Rng>(num_wedges: usize, hidden: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(num_wedges, hidden);
        let bound = (6.0 / num_wedges as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        m.w1.mapv_inplace(|_| rng.sample(dist));
        m
    }

    pub fn forward(&self, pooled: &[f64]) -> Result<(Vec<f64>, ExciteCache)> {
        if pooled.len() != self.w1.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} descriptors for an MLP over {} wedges",
                pooled.len(),
                self.w1.ncols()
            )));
        }
        let input = Array1::from(pooled.to_vec());
        let pre = linear_forward(&input, &self.w1, &self.b1);
        let hidden = pre.mapv(|v| v.max(0.0));
        let scores = linear_forward(&hidden, &self.w2, &self.b2).mapv(sigmoid);
        let out = scores.to_vec();
        Ok((
            out,
            ExciteCache {
                input,
                pre,
                hidden,
                scores,
            },
        ))
    }

    pub fn backward(&self, cache: &ExciteCache, d_scores: &[f64]) -> (Vec<f64>, ExciteMlp) {
        let d_logit = Array1::from_shape_fn(d_scores.len(), |i| {
            let s = cache.scores[i];
            d_scores[i] * s * (1.0 - s)
        });
        let (d_hidden, w2, b2) = linear_backward(&cache.hidden, &self.w2, &d_logit);
        let d_pre = Array1::from_shape_fn(d_hidden.len(), |i| if cache.pre[i] > 0.0 { d_hidden[i] } else { 0.0 });
        let (d_input, w1, b1) = linear_backward(&cache.input, &self.w1, &d_pre);
        (d_input.to_vec(), ExciteMlp { w1, b1, w2, b2 })
    }
}

/// Squeeze stack plus excitation MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeSe {
    pub squeeze: SqueezeStack,
    pub excite: ExciteMlp,
}

impl WedgeSe {
    pub fn init<R: Rng>(num_wedges: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            squeeze: SqueezeStack::init(num_wedges, rng),
            excite: ExciteMlp::init(num_wedges, hidden, rng),
        }
    }

    pub fn zeros(num_wedges: usize, hidden: usize) -> Self {
        Self {
            squeeze: SqueezeStack::zeros(num_wedges),
            excite: ExciteMlp::zeros(num_wedges, hidden),
        }
    }

    pub fn num_wedges(&self) -> usize {
        self.squeeze.num_wedges()
    }

    pub fn hidden(&self) -> usize {
        self.excite.b1.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_wedges(), self.hidden())
    }

    /// Scores and gates for one channel's magnitudes.
    pub fn gate_vector(&self, mags: &[Array2<f64>], grid: (usize, usize)) -> Result<GateVector> {
        let pooled = squeeze(mags, &self.squeeze, grid)?;
        excite(&pooled, &self.excite)
    }
}

impl Parameters for WedgeSe {
    fn visit(&self, f: &mut TensorVisitor) {
        for (i, (w, b)) in self.squeeze.weights.iter().zip(&self.squeeze.biases).enumerate() {
            f(&format!("squeeze.{i}.weight"), w.shape(), slice(w));
            f(&format!("squeeze.{i}.bias"), b.shape(), slice(b));
        }
        let m = &self.excite;
        f("excite.w1", m.w1.shape(), slice(&m.w1));
        f("excite.b1", m.b1.shape(), slice(&m.b1));
        f("excite.w2", m.w2.shape(), slice(&m.w2));
        f("excite.b2", m.b2.shape(), slice(&m.b2));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, (w, b)) in self
            .squeeze
            .weights
            .iter_mut()
            .zip(&mut self.squeeze.biases)
            .enumerate()
        {
            f(&format!("squeeze.{i}.weight"), slice_mut(w));
            f(&format!("squeeze.{i}.bias"), slice_mut(b));
        }
        let m = &mut self.excite;
        f("excite.w1", slice_mut(&mut m.w1));
        f("excite.b1", slice_mut(&mut m.b1));
        f("excite.w2", slice_mut(&mut m.w2));
        f("excite.b2", slice_mut(&mut m.b2));
    }
}

/// Resample, convolve, pool: one descriptor per wedge.
pub fn squeeze(mags: &[Array2<f64>], stack: &SqueezeStack, grid: (usize, usize)) -> Result<Vec<f64>> {
    stack.forward(mags, grid).map(|(p, _)| p)
}

pub fn excite(pooled: &[f64], mlp: &ExciteMlp) -> Result<GateVector> {
    mlp.forward(pooled).map(|(s, _)| GateVector::from_scores(s))
}

/// Multiplies wedge `i` by `factors[i]`.
pub fn scale_wedges(mags: &[Array2<f64>], factors: &[f64]) -> Result<Vec<Array2<f64>>> {
    if mags.len() != factors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} wedges vs {} gates",
            mags.len(),
            factors.len()
        )));
    }
    Ok(mags.iter().zip(factors).map(|(m, &g)| m * g).collect())
}

/// Multiplies every wedge by its binary gate.
pub fn apply_gates(mags: &[Array2<f64>], gates: &GateVector) -> Result<Vec<Array2<f64>>> {
    scale_wedges(mags, &gates.multipliers(GateMode::Binary))
}

struct GateCache {
    mags: Vec<Array2<f64>>,
    squeeze: SqueezeCache,
    excite: ExciteCache,
    gates: GateVector,
}

/// Gradients produced by [`GateTape::vjp`].
pub struct GateGrads {
    pub magnitudes: Vec<Array2<f64>>,
    pub scores: Vec<f64>,
    pub params: WedgeSe,
}

/// Forward pass with cached intermediates, followed by any number of
/// vector-Jacobian products.
pub struct GateTape<'a> {
    se: &'a WedgeSe,
    mode: GateMode,
    cache: Option<GateCache>,
}

impl<'a> GateTape<'a> {
    pub fn new(se: &'a WedgeSe, mode: GateMode) -> Self {
        Self { se, mode, cache: None }
    }

    /// Returns the gate vector and the gated magnitudes.
    pub fn forward(&mut self, mags: &[Array2<f64>], grid: (usize, usize)) -> Result<(GateVector, Vec<Array2<f64>>)> {
        let (pooled, squeeze) = self.se.squeeze.forward(mags, grid)?;
        let (scores, excite) = self.se.excite.forward(&pooled)?;
        let gates = GateVector::from_scores(scores);
        let gated = scale_wedges(mags, &gates.multipliers(self.mode))?;
        self.cache = Some(GateCache {
            mags: mags.to_vec(),
            squeeze,
            excite,
            gates: gates.clone(),
        });
        Ok((gates, gated))
    }

    /// Pulls `d_gated` (and optional direct score gradients, e.g. from a
    /// sparsity penalty) back to the magnitudes and the parameters.
    pub fn vjp(&self, d_gated: &[Array2<f64>], d_scores_extra: Option<&[f64]>) -> Result<GateGrads> {
        let cache = self.cache.as_ref().ok_or(Error::MissingForwardCache)?;
        let n = cache.mags.len();
        if d_gated.len() != n || d_scores_extra.is_some_and(|d| d.len() != n) {
            return Err(Error::ShapeMismatch("gradient count differs from wedge count".into()));
        }
        let mult = cache.gates.multipliers(self.mode);
        let mut d_scores = Vec::with_capacity(n);
        let mut d_mags = Vec::with_capacity(n);
        for i in 0..n {
            if d_gated[i].dim() != cache.mags[i].dim() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for wedge {} has wrong shape",
                    i + 1
                )));
            }
            // Straight-through in binary mode: d gate / d score = 1.
            let extra = d_scores_extra.map_or(0.0, |d| d[i]);
            d_scores.push((&d_gated[i] * &cache.mags[i]).sum() + extra);
            d_mags.push(&d_gated[i] * mult[i]);
        }
        let (d_pooled, excite) = self.se.excite.backward(&cache.excite, &d_scores);
        let (d_mags_sq, squeeze) = self.se.squeeze.backward(&cache.squeeze, &d_pooled);
        for (a, b) in d_mags.iter_mut().zip(d_mags_sq) {
            *a += &b;
        }
        Ok(GateGrads {
            magnitudes: d_mags,
            scores: d_scores,
            params: WedgeSe { squeeze, excite },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trace_for_299_and_fallbacks() {
        let t: Vec<usize> = squeeze_trace(299, 299).iter().map(|d| d.0).collect();
        assert_eq!(t, vec![149, 74, 37, 19, 9, 4]);
        assert_eq!(squeeze_trace(64, 64), vec![(31, 31), (15, 15), (8, 8), (4, 4)]);
        assert_eq!(squeeze_trace(16, 16), vec![(7, 7)]);
        assert_eq!(squeeze_trace(8, 8), vec![(3, 3)]);
    }

    #[test]
    fn zero_magnitudes_pool_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stack = SqueezeStack::init(3, &mut rng);
        let mags = vec![Array2::zeros((5, 4)), Array2::zeros((3, 3)), Array2::zeros((9, 9))];
        for grid in [(299, 299), (64, 64), (16, 16)] {
            assert_eq!(squeeze(&mags, &stack, grid).unwrap(), vec![0.0; 3]);
        }
    }

    #[test]
    fn constant_field_with_centre_taps() {
        // The centre tap always lands inside the input, so a constant passes
        // through every layer unchanged.
        let c = 2.75;
        let mags = vec![Array2::from_elem((40, 31), c)];
        let pooled = squeeze(&mags, &SqueezeStack::centre_tap(1), (299, 299)).unwrap();
        assert!((pooled[0] - c).abs() < 1e-12, "{}", pooled[0]);
    }

    #[test]
    fn excite_examples() {
        let zero = ExciteMlp::zeros(4, 16);
        let g = excite(&[1.0, -3.0, 0.0, 7.0], &zero).unwrap();
        assert_eq!(g.scores, vec![0.5; 4]);
        assert_eq!(g.gates, vec![1; 4]);

        let mut biased = ExciteMlp::zeros(4, 16);
        biased.b2.fill(10.0);
        let g = excite(&[0.3; 4], &biased).unwrap();
        // 1 / (1 + e^-10)
        assert!(g.scores.iter().all(|s| (s - 0.999_954_602_131_297_6).abs() < 1e-15));
        assert_eq!(g.active_count(), 4);

        assert_eq!(binary_threshold(0.49), 0);
        assert_eq!(binary_threshold(0.5), 1);
        assert!(excite(&[0.0; 3], &zero).is_err());
    }

    #[test]
    fn gating_examples_and_idempotence() {
        let mags = vec![Array2::from_elem((2, 3), 1.5), Array2::from_elem((4, 1), -2.0)];
        let open = GateVector::from_scores(vec![0.9, 0.6]);
        assert_eq!(apply_gates(&mags, &open).unwrap(), mags);
        let shut = GateVector::from_scores(vec![0.1, 0.2]);
        assert!(apply_gates(&mags, &shut)
            .unwrap()
            .iter()
            .all(|m| m.iter().all(|v| *v == 0.0)));
        let mixed = GateVector::from_scores(vec![0.2, 0.7]);
        let once = apply_gates(&mags, &mixed).unwrap();
        assert_eq!(apply_gates(&once, &mixed).unwrap(), once);
        assert!(apply_gates(&mags[..1], &mixed).is_err());
    }

    #[test]
    fn vjp_without_forward_fails() {
        let se = WedgeSe::zeros(2, 4);
        let tape = GateTape::new(&se, GateMode::Binary);
        assert_eq!(tape.vjp(&[], None).err(), Some(Error::MissingForwardCache));
    }

    #[test]
    fn vjp_is_linear_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut se = WedgeSe::init(3, 5, &mut rng);
        se.excite.w2.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let mags: Vec<_> = [(6, 5), (3, 4), (16, 16)]
            .iter()
            .map(|&d| Array2::from_shape_fn(d, |(i, j)| ((i * 3 + j) % 5) as f64 * 0.3))
            .collect();
        let mut tape = GateTape::new(&se, GateMode::Binary);
        tape.forward(&mags, (16, 16)).unwrap();
        let up: Vec<_> = mags.iter().map(|m| m.mapv(|v| 0.5 - v)).collect();
        let up2: Vec<_> = up.iter().map(|m| m * 2.0).collect();
        let zero: Vec<_> = up.iter().map(|m| m * 0.0).collect();
        let a = tape.vjp(&up, None).unwrap().params.flatten();
        let b = tape.vjp(&up2, None).unwrap().params.flatten();
        assert!(a.iter().any(|v| *v != 0.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        assert!(tape
            .vjp(&zero, None)
            .unwrap()
            .params
            .flatten()
            .iter()
            .all(|v| *v == 0.0));
    }
}
