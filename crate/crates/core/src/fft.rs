//! Unitary 2D FFTs on row-major complex arrays.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward/inverse plans for one `rows x cols` grid, scaled by `1/sqrt(rows*cols)`
/// so that both directions are unitary.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(planner: &mut FftPlanner<f64>, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
            scale: 1.0 / ((rows * cols) as f64).sqrt(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    fn run(&self, data: &mut Array2<Complex64>, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft grid mismatch");
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().to_owned();
        }
        let buf = data.as_slice_mut().expect("standard layout");
        row.process(buf);

        let mut t = vec![Complex64::default(); buf.len()];
        transpose(buf, &mut t, self.rows, self.cols);
        col.process(&mut t);
        transpose(&t, buf, self.cols, self.rows);

        for v in buf.iter_mut() {
            *v *= self.scale;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}
