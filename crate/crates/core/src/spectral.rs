//! Magnitude/phase split of complex wedge coefficients and its inverse.

use std::sync::Arc;

use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;

use crate::curvelet::{CurveletCoeffs, CurveletGeometry};
use crate::error::{Error, Result};

/// Per-wedge magnitude and phase arrays.
#[derive(Debug, Clone)]
pub struct MagPhase {
    pub magnitude: Vec<Array2<f64>>,
    pub phase: Vec<Array2<f64>>,
}

/// Phase in `(-pi, pi]`, zero at the origin.
pub fn phase_of(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        0.0
    } else {
        let t = z.im.atan2(z.re);
        // atan2(-0.0, x<0) yields -pi; fold it onto +pi.
        if t == -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            t
        }
    }
}

pub fn decompose(coeffs: &CurveletCoeffs) -> MagPhase {
    let (magnitude, phase) = coeffs
        .wedges()
        .iter()
        .map(|w| (w.mapv(|z| z.norm()), w.mapv(phase_of)))
        .unzip();
    MagPhase { magnitude, phase }
}

/// `mag * (cos theta + i sin theta)` per element. Negative magnitudes pass
/// through unchanged and act as a phase flip.
pub fn recompose(
    geometry: &Arc<CurveletGeometry>,
    magnitude: &[Array2<f64>],
    phase: &[Array2<f64>],
) -> Result<CurveletCoeffs> {
    if magnitude.len() != phase.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} magnitude arrays vs {} phase arrays",
            magnitude.len(),
            phase.len()
        )));
    }
    let wedges = magnitude
        .iter()
        .zip(phase)
        .enumerate()
        .map(|(i, (m, p))| {
            if m.dim() != p.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "wedge {}: magnitude {:?} vs phase {:?}",
                    i + 1,
                    m.dim(),
                    p.dim()
                )));
            }
            Ok(Zip::from(m).and(p).map_collect(|&m, &t| Complex64::from_polar(m, t)))
        })
        .collect::<Result<Vec<_>>>()?;
    CurveletCoeffs::new(Arc::clone(geometry), wedges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvelet::fdct_forward;
    use proptest::prelude::*;

    #[test]
    fn three_four_five() {
        let z = Complex64::new(3.0, 4.0);
        assert_eq!(z.norm(), 5.0);
        // atan(4/3), evaluated independently.
        assert!((phase_of(z) - 0.927_295_218_001_612_2).abs() < 1e-12);
        let back = Complex64::from_polar(5.0, 0.927295218);
        assert!((back - z).norm() < 1e-8);
        let back = Complex64::from_polar(5.0, phase_of(z));
        assert!((back - z).norm() < 1e-12);
    }

    #[test]
    fn degenerate_and_axis_cases() {
        assert_eq!(phase_of(Complex64::new(1.0, 0.0)), 0.0);
        assert_eq!(phase_of(Complex64::new(0.0, 0.0)), 0.0);
        assert_eq!(phase_of(Complex64::new(-0.0, -0.0)), 0.0);
        assert_eq!(phase_of(Complex64::new(-1.0, -0.0)), std::f64::consts::PI);
        assert_eq!(Complex64::from_polar(0.0, 1.3), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn recompose_rejects_shape_mismatch() {
        let g = Arc::new(CurveletGeometry::new(16, 16, 3, 8).unwrap());
        let c = fdct_forward(&Array2::zeros((16, 16)), &g).unwrap();
        let mut mp = decompose(&c);
        mp.phase[2] = Array2::zeros((1, 2));
        assert!(matches!(
            recompose(&g, &mp.magnitude, &mp.phase),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(recompose(&g, &mp.magnitude[1..], &mp.phase[1..]).is_err());
    }

    #[test]
    fn negative_magnitude_flips_phase() {
        let z = Complex64::from_polar(-2.0, 0.3);
        assert!((z + Complex64::from_polar(2.0, 0.3)).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn round_trip_and_modulus(re in -1e3f64..1e3, im in -1e3f64..1e3, m in -10f64..10.0) {
            let z = Complex64::new(re, im);
            let back = Complex64::from_polar(z.norm(), phase_of(z));
            prop_assert!((back - z).norm() <= 1e-12 * (1.0 + z.norm()));
            let t = phase_of(z);
            prop_assert!(t > -std::f64::consts::PI && t <= std::f64::consts::PI);
            prop_assert!((Complex64::from_polar(m, t).norm() - m.abs()).abs() <= 1e-12 * (1.0 + m.abs()));
        }
    }

    #[test]
    fn wedge_round_trip() {
        let g = Arc::new(CurveletGeometry::new(32, 32, 4, 8).unwrap());
        let x = Array2::from_shape_fn((32, 32), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let c = fdct_forward(&x, &g).unwrap();
        let mp = decompose(&c);
        assert!(mp.magnitude.iter().flatten().all(|m| *m >= 0.0));
        let back = recompose(&g, &mp.magnitude, &mp.phase).unwrap();
        for (a, b) in c.wedges().iter().zip(back.wedges()) {
            for (p, q) in a.iter().zip(b.iter()) {
                assert!((p - q).norm() <= 1e-12);
            }
        }
    }
}
