use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use super::geometry::CurveletGeometry;
use crate::error::{Error, Result};

/// Complex coefficients of one image channel, one array per wedge in flat order.
#[derive(Debug, Clone)]
pub struct CurveletCoeffs {
    geometry: Arc<CurveletGeometry>,
    wedges: Vec<Array2<Complex64>>,
}

impl CurveletCoeffs {
    pub fn new(geometry: Arc<CurveletGeometry>, wedges: Vec<Array2<Complex64>>) -> Result<Self> {
        if wedges.len() != geometry.num_wedges() {
            return Err(Error::ShapeMismatch(format!(
                "{} wedge arrays for a {}-wedge geometry",
                wedges.len(),
                geometry.num_wedges()
            )));
        }
        for (w, arr) in geometry.wedges().iter().zip(&wedges) {
            if arr.dim() != w.tile {
                return Err(Error::ShapeMismatch(format!(
                    "wedge {} is {:?}, expected {:?}",
                    w.index,
                    arr.dim(),
                    w.tile
                )));
            }
        }
        Ok(Self { geometry, wedges })
    }

    pub fn zeros(geometry: Arc<CurveletGeometry>) -> Self {
        let wedges = geometry.tile_shapes().into_iter().map(Array2::zeros).collect();
        Self { geometry, wedges }
    }

    pub fn geometry(&self) -> &Arc<CurveletGeometry> {
        &self.geometry
    }

    pub fn wedges(&self) -> &[Array2<Complex64>] {
        &self.wedges
    }

    pub fn wedges_mut(&mut self) -> &mut [Array2<Complex64>] {
        &mut self.wedges
    }

    pub fn into_wedges(self) -> Vec<Array2<Complex64>> {
        self.wedges
    }

    /// Wedge by 1-based flat index.
    pub fn flat(&self, index: usize) -> Option<&Array2<Complex64>> {
        index.checked_sub(1).and_then(|i| self.wedges.get(i))
    }

    pub fn get(&self, scale: usize, angle: usize) -> Option<&Array2<Complex64>> {
        self.geometry.position(scale, angle).map(|p| &self.wedges[p])
    }

    /// Sum of squared moduli over every coefficient.
    pub fn energy(&self) -> f64 {
        self.wedges.iter().flat_map(|w| w.iter()).map(|z| z.norm_sqr()).sum()
    }

    /// Real inner product `Re sum conj(a) b`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.wedges
            .iter()
            .zip(&other.wedges)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }
}

/// Forward transform: FFT, window, wrap onto each wedge tile, inverse FFT of the tile.
pub fn fdct_forward(image: &Array2<f64>, geometry: &Arc<CurveletGeometry>) -> Result<CurveletCoeffs> {
    if image.dim() != geometry.dims() {
        return Err(Error::ShapeMismatch(format!(
            "image is {:?}, geometry is {:?}",
            image.dim(),
            geometry.dims()
        )));
    }
    let mut spectrum = image.mapv(|v| Complex64::new(v, 0.0));
    geometry.grid_fft().forward(&mut spectrum);
    let spec = spectrum.as_slice().expect("standard layout");

    let wedges = geometry
        .wedges()
        .iter()
        .map(|w| {
            let mut tile = Array2::<Complex64>::zeros(w.tile);
            let buf = tile.as_slice_mut().expect("standard layout");
            for t in w.taps() {
                buf[t.tile] += spec[t.grid] * t.weight;
            }
            geometry.tile_fft(w).inverse(&mut tile);
            tile
        })
        .collect();
    Ok(CurveletCoeffs {
        geometry: Arc::clone(geometry),
        wedges,
    })
}

/// Adjoint (and, for this tight frame, inverse) of [`fdct_forward`],
/// restricted to real images.
pub fn fdct_inverse(coeffs: &CurveletCoeffs) -> Result<Array2<f64>> {
    let geometry = &coeffs.geometry;
    if coeffs.wedges.len() != geometry.num_wedges() {
        return Err(Error::ShapeMismatch("wedge count differs from geometry".into()));
    }
    let (h, w) = geometry.dims();
    let mut spectrum = vec![Complex64::default(); h * w];
    for (win, arr) in geometry.wedges().iter().zip(&coeffs.wedges) {
        if arr.dim() != win.tile {
            return Err(Error::ShapeMismatch(format!(
                "wedge {} is {:?}, expected {:?}",
                win.index,
                arr.dim(),
                win.tile
            )));
        }
        let mut tile = arr.to_owned();
        geometry.tile_fft(win).forward(&mut tile);
        let buf = tile.as_slice().expect("standard layout");
        for t in win.taps() {
            spectrum[t.grid] += buf[t.tile] * t.weight;
        }
    }
    let mut spectrum = Array2::from_shape_vec((h, w), spectrum).expect("grid shape");
    geometry.grid_fft().inverse(&mut spectrum);
    Ok(spectrum.mapv(|z| z.re))
}

/// `|<F x, y> - <x, F* y>| / (|x| |y|)` for given `x` and `y`; zero when either is zero.
pub fn adjoint_discrepancy(x: &Array2<f64>, y: &CurveletCoeffs) -> Result<f64> {
    let fx = fdct_forward(x, y.geometry())?;
    let fty = fdct_inverse(y)?;
    let lhs = fx.inner(y);
    let rhs: f64 = x.iter().zip(fty.iter()).map(|(a, b)| a * b).sum();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt() * y.energy().sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok((lhs - rhs).abs() / norm)
}

/// Adjoint identity check with seeded Gaussian `x` (image) and `y` (coefficients).
pub fn adjoint_check(geometry: &Arc<CurveletGeometry>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn(geometry.dims(), || StandardNormal.sample(&mut rng));
    let wedges = geometry
        .tile_shapes()
        .into_iter()
        .map(|shape| {
            Array2::from_shape_simple_fn(shape, || {
                Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
            })
        })
        .collect();
    let y = CurveletCoeffs {
        geometry: Arc::clone(geometry),
        wedges,
    };
    adjoint_discrepancy(&x, &y).expect("shapes built from the geometry")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvelet::CurveletGeometry;

    fn seeded_image(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((h, w), || StandardNormal.sample(&mut rng))
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_in_zero_out() {
        let g = Arc::new(CurveletGeometry::new(32, 32, 4, 8).unwrap());
        let c = fdct_forward(&Array2::zeros((32, 32)), &g).unwrap();
        assert!(c.wedges().iter().all(|w| w.iter().all(|z| *z == Complex64::default())));
        let img = fdct_inverse(&CurveletCoeffs::zeros(g)).unwrap();
        assert!(img.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn round_trip_and_parseval_on_odd_grid() {
        let g = Arc::new(CurveletGeometry::new(45, 38, 4, 8).unwrap());
        let x = seeded_image(45, 38, 3);
        let c = fdct_forward(&x, &g).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        assert!((c.energy() - ex).abs() / ex < 1e-12);
        assert!(rel_err(&fdct_inverse(&c).unwrap(), &x) < 1e-12);
    }

    #[test]
    fn doubling_input_doubles_coefficients() {
        let g = Arc::new(CurveletGeometry::new(32, 32, 4, 8).unwrap());
        let x = seeded_image(32, 32, 9);
        let c1 = fdct_forward(&x, &g).unwrap();
        let c2 = fdct_forward(&(&x * 2.0), &g).unwrap();
        for (a, b) in c1.wedges().iter().zip(c2.wedges()) {
            for (p, q) in a.iter().zip(b.iter()) {
                assert_eq!(*p * 2.0, *q);
            }
        }
    }

    #[test]
    fn halving_coefficients_halves_image() {
        let g = Arc::new(CurveletGeometry::new(32, 32, 4, 8).unwrap());
        let x = seeded_image(32, 32, 5);
        let mut c = fdct_forward(&x, &g).unwrap();
        for w in c.wedges_mut() {
            w.mapv_inplace(|z| z * 0.5);
        }
        assert!(rel_err(&fdct_inverse(&c).unwrap(), &(&x * 0.5)) < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let g = Arc::new(CurveletGeometry::new(32, 32, 4, 8).unwrap());
        assert!(matches!(
            fdct_forward(&Array2::zeros((32, 31)), &g),
            Err(Error::ShapeMismatch(_))
        ));
        let mut wedges = CurveletCoeffs::zeros(Arc::clone(&g)).into_wedges();
        wedges[3] = Array2::zeros((1, 1));
        assert!(matches!(
            CurveletCoeffs::new(Arc::clone(&g), wedges),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(CurveletCoeffs::new(g, Vec::new()).is_err());
    }

    #[test]
    fn adjoint_identity_and_zero_case() {
        let g = Arc::new(CurveletGeometry::new(64, 64, 4, 8).unwrap());
        assert!(adjoint_check(&g, 0) <= 1e-8);
        let y = fdct_forward(&seeded_image(64, 64, 1), &g).unwrap();
        assert_eq!(adjoint_discrepancy(&Array2::zeros((64, 64)), &y).unwrap(), 0.0);
    }
}
