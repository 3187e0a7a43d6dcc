//! Small dense/convolutional building blocks with hand-written backward passes.
//!
//! Everything works on `f64` and `ndarray` arrays in `(channel, row, col)`
//! order. Backward functions take the forward input and the upstream
//! gradient and return gradients for the input and the parameters.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView3};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Output length of a strided, zero-padded convolution.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - kernel) / stride + 1
}

/// Geometry of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_len(h, self.kernel, self.stride, self.pad),
            conv_out_len(w, self.kernel, self.stride, self.pad),
        )
    }

    /// Outputs whose tap `k` lands inside an input of length `n`.
    #[inline]
    fn tap_range(&self, k: usize, n: usize, out_len: usize) -> std::ops::Range<usize> {
        let s = self.stride;
        let lo = if self.pad > k { (self.pad - k).div_ceil(s) } else { 0 };
        if n + self.pad <= k {
            return 0..0;
        }
        let hi = ((n - 1 + self.pad - k) / s + 1).min(out_len);
        lo..hi.max(lo)
    }
}

/// Sizes of one input plane, one output plane and the kernel.
#[derive(Clone, Copy)]
struct Planes {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    shape: ConvShape,
}

impl Planes {
    /// `out += input (*) kernel`, all row-major.
    fn forward(&self, input: &[f64], kernel: &[f64], out: &mut [f64]) {
        let ConvShape {
            kernel: k,
            stride: s,
            pad: p,
        } = self.shape;
        for ky in 0..k {
            let ry = self.shape.tap_range(ky, self.h, self.oh);
            for kx in 0..k {
                let rx = self.shape.tap_range(kx, self.w, self.ow);
                let wv = kernel[ky * k + kx];
                for oy in ry.clone() {
                    let irow = &input[(oy * s + ky - p) * self.w..];
                    let orow = &mut out[oy * self.ow..(oy + 1) * self.ow];
                    for ox in rx.clone() {
                        orow[ox] += wv * irow[ox * s + kx - p];
                    }
                }
            }
        }
    }

    /// Accumulates kernel and input gradients for one plane pair.
    fn backward(&self, input: &[f64], kernel: &[f64], grad_out: &[f64], g_kernel: &mut [f64], g_input: &mut [f64]) {
        let ConvShape {
            kernel: k,
            stride: s,
            pad: p,
        } = self.shape;
        for ky in 0..k {
            let ry = self.shape.tap_range(ky, self.h, self.oh);
            for kx in 0..k {
                let rx = self.shape.tap_range(kx, self.w, self.ow);
                let wv = kernel[ky * k + kx];
                let mut acc = 0.0;
                for oy in ry.clone() {
                    let row = (oy * s + ky - p) * self.w;
                    let grow = &grad_out[oy * self.ow..(oy + 1) * self.ow];
                    for ox in rx.clone() {
                        let ix = row + ox * s + kx - p;
                        acc += grow[ox] * input[ix];
                        g_input[ix] += grow[ox] * wv;
                    }
                }
                g_kernel[ky * k + kx] += acc;
            }
        }
    }
}

fn contiguous<'a, D: ndarray::Dimension>(a: &'a ndarray::ArrayView<'a, f64, D>) -> std::borrow::Cow<'a, [f64]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

/// One filter per channel.
pub fn depthwise_forward(
    input: ArrayView3<f64>,
    weight: ArrayView3<f64>,
    bias: ArrayView1<f64>,
    shape: ConvShape,
) -> Array3<f64> {
    let (c, h, w) = input.dim();
    let (oh, ow) = shape.out_dims(h, w);
    let kk = shape.kernel * shape.kernel;
    let planes = Planes { h, w, oh, ow, shape };
    let x = contiguous(&input);
    let wt = contiguous(&weight);
    let mut out = Array3::zeros((c, oh, ow));
    let o = out.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let plane = &mut o[ch * oh * ow..(ch + 1) * oh * ow];
        plane.fill(bias[ch]);
        planes.forward(&x[ch * h * w..(ch + 1) * h * w], &wt[ch * kk..(ch + 1) * kk], plane);
    }
    out
}

pub struct DepthwiseGrads {
    pub input: Array3<f64>,
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

pub fn depthwise_backward(
    input: ArrayView3<f64>,
    weight: ArrayView3<f64>,
    grad_out: ArrayView3<f64>,
    shape: ConvShape,
) -> DepthwiseGrads {
    let (c, h, w) = input.dim();
    let (_, oh, ow) = grad_out.dim();
    let k = shape.kernel;
    let kk = k * k;
    let planes = Planes { h, w, oh, ow, shape };
    let x = contiguous(&input);
    let wt = contiguous(&weight);
    let g = contiguous(&grad_out);
    let mut gi = Array3::zeros((c, h, w));
    let mut gw = Array3::zeros((c, k, k));
    let mut gb = Array1::zeros(c);
    let gis = gi.as_slice_mut().expect("fresh array");
    let gws = gw.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let go = &g[ch * oh * ow..(ch + 1) * oh * ow];
        gb[ch] = go.iter().sum();
        planes.backward(
            &x[ch * h * w..(ch + 1) * h * w],
            &wt[ch * kk..(ch + 1) * kk],
            go,
            &mut gws[ch * kk..(ch + 1) * kk],
            &mut gis[ch * h * w..(ch + 1) * h * w],
        );
    }
    DepthwiseGrads {
        input: gi,
        weight: gw,
        bias: gb,
    }
}

/// Dense convolution, weight laid out `(out, in, k, k)`.
pub fn conv2d_forward(
    input: ArrayView3<f64>,
    weight: &Array4<f64>,
    bias: &Array1<f64>,
    shape: ConvShape,
) -> Array3<f64> {
    let (cin, h, w) = input.dim();
    let (cout, _, k, _) = weight.dim();
    let kk = k * k;
    let (oh, ow) = shape.out_dims(h, w);
    let planes = Planes { h, w, oh, ow, shape };
    let x = contiguous(&input);
    let wv = weight.view();
    let wt = contiguous(&wv);
    let mut out = Array3::zeros((cout, oh, ow));
    let o = out.as_slice_mut().expect("fresh array");
    for co in 0..cout {
        let plane = &mut o[co * oh * ow..(co + 1) * oh * ow];
        plane.fill(bias[co]);
        for ci in 0..cin {
            let kernel = &wt[(co * cin + ci) * kk..(co * cin + ci + 1) * kk];
            planes.forward(&x[ci * h * w..(ci + 1) * h * w], kernel, plane);
        }
    }
    out
}

pub struct Conv2dGrads {
    pub input: Array3<f64>,
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

pub fn conv2d_backward(
    input: ArrayView3<f64>,
    weight: &Array4<f64>,
    grad_out: ArrayView3<f64>,
    shape: ConvShape,
) -> Conv2dGrads {
    let (cin, h, w) = input.dim();
    let (cout, _, k, _) = weight.dim();
    let kk = k * k;
    let (_, oh, ow) = grad_out.dim();
    let planes = Planes { h, w, oh, ow, shape };
    let x = contiguous(&input);
    let wv = weight.view();
    let wt = contiguous(&wv);
    let g = contiguous(&grad_out);
    let mut gi = Array3::zeros((cin, h, w));
    let mut gw = Array4::zeros(weight.dim());
    let mut gb = Array1::zeros(cout);
    let gis = gi.as_slice_mut().expect("fresh array");
    let gws = gw.as_slice_mut().expect("fresh array");
    for co in 0..cout {
        let go = &g[co * oh * ow..(co + 1) * oh * ow];
        gb[co] = go.iter().sum();
        for ci in 0..cin {
            let at = (co * cin + ci) * kk;
            planes.backward(
                &x[ci * h * w..(ci + 1) * h * w],
                &wt[at..at + kk],
                go,
                &mut gws[at..at + kk],
                &mut gis[ci * h * w..(ci + 1) * h * w],
            );
        }
    }
    Conv2dGrads {
        input: gi,
        weight: gw,
        bias: gb,
    }
}

/// Linear interpolation weights along one axis, half-pixel centres,
/// edge-clamped (the usual `align_corners = false` convention).
#[derive(Debug, Clone)]
pub struct Resample1d {
    src_len: usize,
    taps: Vec<(usize, usize, f64)>,
}

impl Resample1d {
    pub fn new(src_len: usize, dst_len: usize) -> Self {
        let scale = src_len as f64 / dst_len as f64;
        let taps = (0..dst_len)
            .map(|i| {
                let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (x.floor() as usize).min(src_len - 1);
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, x - i0 as f64)
            })
            .collect();
        Self { src_len, taps }
    }

    pub fn dst_len(&self) -> usize {
        self.taps.len()
    }
}

/// Separable bilinear resize.
pub fn bilinear_forward(src: &Array2<f64>, rows: &Resample1d, cols: &Resample1d) -> Array2<f64> {
    assert_eq!(src.dim(), (rows.src_len, cols.src_len));
    Array2::from_shape_fn((rows.dst_len(), cols.dst_len()), |(i, j)| {
        let (r0, r1, fr) = rows.taps[i];
        let (c0, c1, fc) = cols.taps[j];
        let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
        let bot = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
        top * (1.0 - fr) + bot * fr
    })
}

/// Transpose of [`bilinear_forward`].
pub fn bilinear_backward(grad: &Array2<f64>, rows: &Resample1d, cols: &Resample1d) -> Array2<f64> {
    let mut out = Array2::zeros((rows.src_len, cols.src_len));
    for ((i, j), &g) in grad.indexed_iter() {
        let (r0, r1, fr) = rows.taps[i];
        let (c0, c1, fc) = cols.taps[j];
        out[[r0, c0]] += g * (1.0 - fr) * (1.0 - fc);
        out[[r0, c1]] += g * (1.0 - fr) * fc;
        out[[r1, c0]] += g * fr * (1.0 - fc);
        out[[r1, c1]] += g * fr * fc;
    }
    out
}

fn pool_bins(n: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out).map(|i| (i * n / out, ((i + 1) * n).div_ceil(out))).collect()
}

/// Adaptive average pooling with the usual floor/ceil bin edges; works for
/// `out > n` as well (bins then overlap).
pub fn adaptive_avg_pool_forward(input: ArrayView3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = input.dim();
    let by = pool_bins(h, out_h);
    let bx = pool_bins(w, out_w);
    Array3::from_shape_fn((c, out_h, out_w), |(ch, oy, ox)| {
        let (y0, y1) = by[oy];
        let (x0, x1) = bx[ox];
        let mut acc = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                acc += input[[ch, y, x]];
            }
        }
        acc / ((y1 - y0) * (x1 - x0)) as f64
    })
}

pub fn adaptive_avg_pool_backward(grad: ArrayView3<f64>, in_h: usize, in_w: usize) -> Array3<f64> {
    let (c, oh, ow) = grad.dim();
    let by = pool_bins(in_h, oh);
    let bx = pool_bins(in_w, ow);
    let mut out = Array3::zeros((c, in_h, in_w));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, y1) = by[oy];
                let (x0, x1) = bx[ox];
                let g = grad[[ch, oy, ox]] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        out[[ch, y, x]] += g;
                    }
                }
            }
        }
    }
    out
}

/// `W x + b`, weight laid out `(out, in)`.
pub fn linear_forward(x: &Array1<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Array1<f64> {
    weight.dot(x) + bias
}

/// Returns `(grad_x, grad_weight, grad_bias)`.
pub fn linear_backward(
    x: &Array1<f64>,
    weight: &Array2<f64>,
    grad_out: &Array1<f64>,
) -> (Array1<f64>, Array2<f64>, Array1<f64>) {
    let gx = weight.t().dot(grad_out);
    let gw = Array2::from_shape_fn(weight.dim(), |(o, i)| grad_out[o] * x[i]);
    (gx, gw, grad_out.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn numeric<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let mut p = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = 1e-6;
                p[i] = x[i] + h;
                let a = f(&p);
                p[i] = x[i] - h;
                let b = f(&p);
                p[i] = x[i];
                (a - b) / (2.0 * h)
            })
            .collect()
    }

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    fn ramp(n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 23) as f64 / 23.0 - 0.4) * s).collect()
    }

    #[test]
    fn squeeze_chain_sizes_for_299() {
        let kernels = [5, 5, 3, 3, 3, 3];
        let pads = [1, 1, 1, 1, 0, 0];
        let mut n = 299;
        let mut trace = vec![];
        for (k, p) in kernels.iter().zip(pads) {
            n = conv_out_len(n, *k, 2, p);
            trace.push(n);
        }
        assert_eq!(trace, vec![149, 74, 37, 19, 9, 4]);
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn depthwise_gradients() {
        let shape = ConvShape {
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x = Array::from_shape_vec((2, 7, 6), ramp(84, 1.0)).unwrap();
        let w = Array::from_shape_vec((2, 3, 3), ramp(18, 0.7)).unwrap();
        let b = Array1::from(vec![0.1, -0.2]);
        let y = depthwise_forward(x.view(), w.view(), b.view(), shape);
        let up = Array::from_shape_vec(y.dim(), ramp(y.len(), 1.3)).unwrap();
        let g = depthwise_backward(x.view(), w.view(), up.view(), shape);
        let loss = |x: &Array3<f64>, w: &Array3<f64>, b: &Array1<f64>| {
            (depthwise_forward(x.view(), w.view(), b.view(), shape) * &up).sum()
        };
        let nx = numeric(
            |p| loss(&Array::from_shape_vec(x.dim(), p.to_vec()).unwrap(), &w, &b),
            x.as_slice().unwrap(),
        );
        close(g.input.as_slice().unwrap(), &nx);
        let nw = numeric(
            |p| loss(&x, &Array::from_shape_vec(w.dim(), p.to_vec()).unwrap(), &b),
            w.as_slice().unwrap(),
        );
        close(g.weight.as_slice().unwrap(), &nw);
        let nb = numeric(|p| loss(&x, &w, &Array1::from(p.to_vec())), b.as_slice().unwrap());
        close(g.bias.as_slice().unwrap(), &nb);
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        for shape in [
            ConvShape {
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            ConvShape {
                kernel: 5,
                stride: 2,
                pad: 0,
            },
            ConvShape {
                kernel: 3,
                stride: 1,
                pad: 2,
            },
        ] {
            let x = Array::from_shape_vec((2, 7, 6), ramp(84, 1.0)).unwrap();
            let w = Array::from_shape_vec(
                (3, 2, shape.kernel, shape.kernel),
                ramp(6 * shape.kernel * shape.kernel, 0.7),
            )
            .unwrap();
            let b = Array1::from(vec![0.1, -0.2, 0.3]);
            let y = conv2d_forward(x.view(), &w, &b, shape);
            let (oh, ow) = shape.out_dims(7, 6);
            assert_eq!(y.dim(), (3, oh, ow));
            for ((co, oy, ox), &v) in y.indexed_iter() {
                let mut want = b[co];
                for ci in 0..2 {
                    for ky in 0..shape.kernel {
                        for kx in 0..shape.kernel {
                            let iy = (oy * shape.stride + ky) as isize - shape.pad as isize;
                            let ix = (ox * shape.stride + kx) as isize - shape.pad as isize;
                            if (0..7).contains(&iy) && (0..6).contains(&ix) {
                                want += w[[co, ci, ky, kx]] * x[[ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_gradients() {
        let shape = ConvShape {
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x = Array::from_shape_vec((3, 6, 5), ramp(90, 1.0)).unwrap();
        let w = Array::from_shape_vec((2, 3, 3, 3), ramp(54, 0.5)).unwrap();
        let b = Array1::from(vec![0.3, -0.1]);
        let y = conv2d_forward(x.view(), &w, &b, shape);
        assert_eq!(y.dim(), (2, 3, 3));
        let up = Array::from_shape_vec(y.dim(), ramp(y.len(), 0.9)).unwrap();
        let g = conv2d_backward(x.view(), &w, up.view(), shape);
        let loss = |x: &Array3<f64>, w: &Array4<f64>| (conv2d_forward(x.view(), w, &b, shape) * &up).sum();
        let nx = numeric(
            |p| loss(&Array::from_shape_vec(x.dim(), p.to_vec()).unwrap(), &w),
            x.as_slice().unwrap(),
        );
        close(g.input.as_slice().unwrap(), &nx);
        let nw = numeric(
            |p| loss(&x, &Array::from_shape_vec(w.dim(), p.to_vec()).unwrap()),
            w.as_slice().unwrap(),
        );
        close(g.weight.as_slice().unwrap(), &nw);
        assert!((g.bias[0] - up.index_axis(ndarray::Axis(0), 0).sum()).abs() < 1e-12);
    }

    #[test]
    fn bilinear_backward_is_transpose() {
        let rows = Resample1d::new(5, 9);
        let cols = Resample1d::new(7, 4);
        let a = Array::from_shape_vec((5, 7), ramp(35, 1.0)).unwrap();
        let b = Array::from_shape_vec((9, 4), ramp(36, 2.0)).unwrap();
        let lhs = (bilinear_forward(&a, &rows, &cols) * &b).sum();
        let rhs = (bilinear_backward(&b, &rows, &cols) * &a).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let ones = Array2::ones((5, 7));
        assert!(bilinear_forward(&ones, &rows, &cols)
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-15));
        let same = Resample1d::new(6, 6);
        let c = Array::from_shape_vec((6, 6), ramp(36, 1.0)).unwrap();
        assert_eq!(bilinear_forward(&c, &same, &same), c);
    }

    #[test]
    fn adaptive_pool_backward_is_transpose() {
        for &(h, w, oh, ow) in &[(7, 7, 4, 4), (3, 3, 4, 4), (9, 5, 4, 4), (4, 4, 4, 4)] {
            let a = Array::from_shape_vec((2, h, w), ramp(2 * h * w, 1.0)).unwrap();
            let b = Array::from_shape_vec((2, oh, ow), ramp(2 * oh * ow, 1.5)).unwrap();
            let lhs = (adaptive_avg_pool_forward(a.view(), oh, ow) * &b).sum();
            let rhs = (adaptive_avg_pool_backward(b.view(), h, w) * &a).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
        let a = Array::from_shape_vec((1, 4, 4), ramp(16, 1.0)).unwrap();
        assert_eq!(adaptive_avg_pool_forward(a.view(), 4, 4), a);
    }

    #[test]
    fn linear_gradients() {
        let x = Array1::from(vec![0.5, -1.0, 2.0]);
        let w = Array2::from_shape_vec((2, 3), ramp(6, 1.0)).unwrap();
        let up = Array1::from(vec![1.5, -0.5]);
        let (gx, gw, gb) = linear_backward(&x, &w, &up);
        let b = Array1::zeros(2);
        let nx = numeric(
            |p| linear_forward(&Array1::from(p.to_vec()), &w, &b).dot(&up),
            x.as_slice().unwrap(),
        );
        close(gx.as_slice().unwrap(), &nx);
        assert_eq!(gw[[1, 2]], -0.5 * 2.0);
        assert_eq!(gb, up);
    }
}
