//! Small convolutional head on the 12-map stack.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::Uniform;

use crate::nn::{conv2d_backward, conv2d_forward, linear_backward, linear_forward, ConvShape};
use crate::params::{slice, slice_mut, Parameters, TensorVisitor};
use crate::pipeline::STACK_CHANNELS;

pub const HEAD_WIDTH: usize = 8;
const HEAD_CONV: ConvShape = ConvShape {
    kernel: 3,
    stride: 2,
    pad: 1,
};

/// Two stride-2 convolutions with ReLU, global average pool, one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    pub conv1_w: Array4<f64>,
    pub conv1_b: Array1<f64>,
    pub conv2_w: Array4<f64>,
    pub conv2_b: Array1<f64>,
    pub fc_w: Array2<f64>,
    pub fc_b: Array1<f64>,
}

pub struct HeadCache {
    input: Array3<f64>,
    pre1: Array3<f64>,
    act1: Array3<f64>,
    pre2: Array3<f64>,
    pooled: Array1<f64>,
}

fn uniform<R: Rng, D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>, bound: f64, rng: &mut R) {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    a.mapv_inplace(|_| rng.sample(dist));
}

impl ToyClassifier {
    pub fn zeros() -> Self {
        Self {
            conv1_w: Array4::zeros((HEAD_WIDTH, STACK_CHANNELS, 3, 3)),
            conv1_b: Array1::zeros(HEAD_WIDTH),
            conv2_w: Array4::zeros((HEAD_WIDTH, HEAD_WIDTH, 3, 3)),
            conv2_b: Array1::zeros(HEAD_WIDTH),
            fc_w: Array2::zeros((1, HEAD_WIDTH)),
            fc_b: Array1::zeros(1),
        }
    }

    /// He-uniform convolutions, small uniform output layer, zero biases.
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let mut c = Self::zeros();
        uniform(&mut c.conv1_w, (6.0 / (STACK_CHANNELS * 9) as f64).sqrt(), rng);
        uniform(&mut c.conv2_w, (6.0 / (HEAD_WIDTH * 9) as f64).sqrt(), rng);
        uniform(&mut c.fc_w, 1.0 / (HEAD_WIDTH as f64).sqrt(), rng);
        c
    }

    /// Returns the logit; `sigmoid(logit)` is the probability of "fake".
    pub fn forward(&self, stack: &Array3<f64>) -> (f64, HeadCache) {
        let pre1 = conv2d_forward(stack.view(), &self.conv1_w, &self.conv1_b, HEAD_CONV);
        let act1 = pre1.mapv(|v| v.max(0.0));
        let pre2 = conv2d_forward(act1.view(), &self.conv2_w, &self.conv2_b, HEAD_CONV);
        // ReLU after the second convolution is folded into the pooling.
        let pooled = Array1::from_shape_fn(HEAD_WIDTH, |c| {
            let m = pre2.index_axis(Axis(0), c);
            m.iter().map(|v| v.max(0.0)).sum::<f64>() / m.len() as f64
        });
        let logit = linear_forward(&pooled, &self.fc_w, &self.fc_b)[0];
        let cache = HeadCache {
            input: stack.clone(),
            pre1,
            act1,
            pre2,
            pooled,
        };
        (logit, cache)
    }

    /// Returns the gradient for the input stack and for the parameters.
    pub fn backward(&self, cache: &HeadCache, d_logit: f64) -> (Array3<f64>, ToyClassifier) {
        let (d_pooled, fc_w, fc_b) = linear_backward(&cache.pooled, &self.fc_w, &Array1::from_elem(1, d_logit));
        let (_, h2, w2) = cache.pre2.dim();
        let area = (h2 * w2) as f64;
        let d_pre2 = Array3::from_shape_fn(cache.pre2.dim(), |(c, i, j)| {
            if cache.pre2[[c, i, j]] > 0.0 {
                d_pooled[c] / area
            } else {
                0.0
            }
        });
        let g2 = conv2d_backward(cache.act1.view(), &self.conv2_w, d_pre2.view(), HEAD_CONV);
        let d_pre1 = ndarray::Zip::from(&g2.input)
            .and(&cache.pre1)
            .map_collect(|&g, &p| if p > 0.0 { g } else { 0.0 });
        let g1 = conv2d_backward(cache.input.view(), &self.conv1_w, d_pre1.view(), HEAD_CONV);
        let grads = ToyClassifier {
            conv1_w: g1.weight,
            conv1_b: g1.bias,
            conv2_w: g2.weight,
            conv2_b: g2.bias,
            fc_w,
            fc_b,
        };
        (g1.input, grads)
    }
}

impl Parameters for ToyClassifier {
    fn visit(&self, f: &mut TensorVisitor) {
        f("head.conv1.weight", self.conv1_w.shape(), slice(&self.conv1_w));
        f("head.conv1.bias", self.conv1_b.shape(), slice(&self.conv1_b));
        f("head.conv2.weight", self.conv2_w.shape(), slice(&self.conv2_w));
        f("head.conv2.bias", self.conv2_b.shape(), slice(&self.conv2_b));
        f("head.fc.weight", self.fc_w.shape(), slice(&self.fc_w));
        f("head.fc.bias", self.fc_b.shape(), slice(&self.fc_b));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("head.conv1.weight", slice_mut(&mut self.conv1_w));
        f("head.conv1.bias", slice_mut(&mut self.conv1_b));
        f("head.conv2.weight", slice_mut(&mut self.conv2_w));
        f("head.conv2.bias", slice_mut(&mut self.conv2_b));
        f("head.fc.weight", slice_mut(&mut self.fc_w));
        f("head.fc.bias", slice_mut(&mut self.fc_b));
    }
}
