//! Uniform access to learnable tensors, used by the optimizer, checkpoints
//! and the finite-difference checks.

/// Receives a tensor's name, shape and values.
pub type TensorVisitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;

/// A set of named learnable tensors visited in a fixed order.
pub trait Parameters {
    fn visit(&self, f: &mut TensorVisitor);
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    /// Concatenation of every tensor in visit order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    /// Overwrites every tensor from a flat vector in visit order.
    fn assign(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut(&mut |_, v| {
            v.copy_from_slice(&flat[at..at + v.len()]);
            at += v.len();
        });
        assert_eq!(at, flat.len(), "flat parameter length mismatch");
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut at = 0;
        self.visit_mut(&mut |_, v| {
            for x in v.iter_mut() {
                *x += scale * flat[at];
                at += 1;
            }
        });
    }
}

pub(crate) fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored contiguously")
}

pub(crate) fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are stored contiguously")
}
