use std::f64::consts::PI;
use std::sync::Arc;

use curvefeat::curvelet::{fdct_forward, fdct_inverse, CurveletGeometry};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn geometry(h: usize, w: usize, j: usize, a: usize) -> Arc<CurveletGeometry> {
    Arc::new(CurveletGeometry::new(h, w, j, a).unwrap())
}

fn window_at(g: &CurveletGeometry, wedge: usize, grid: usize) -> f64 {
    g.wedges()[wedge]
        .taps()
        .iter()
        .filter(|t| t.grid == grid)
        .map(|t| t.weight)
        .sum()
}

/// Grid index of the signed frequency `(kr, kc)`.
fn grid_index(kr: i64, kc: i64, h: usize, w: usize) -> usize {
    (kr.rem_euclid(h as i64) as usize) * w + kc.rem_euclid(w as i64) as usize
}

// A plane wave's coefficient energy in each wedge is the squared window at
// its two frequencies times the image energy.
#[test]
fn cosine_energy_follows_the_windows() {
    let (h, w) = (48, 40);
    let g = geometry(h, w, 4, 8);
    for &(kr, kc) in &[(3i64, 5i64), (-7, 2), (0, 11), (15, -9), (1, 1)] {
        let x = Array2::from_shape_fn((h, w), |(i, j)| {
            (2.0 * PI * (kr as f64 * i as f64 / h as f64 + kc as f64 * j as f64 / w as f64)).cos()
        });
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let c = fdct_forward(&x, &g).unwrap();
        let (p, n) = (grid_index(kr, kc, h, w), grid_index(-kr, -kc, h, w));
        for (i, wedge) in c.wedges().iter().enumerate() {
            let got: f64 = wedge.iter().map(|z| z.norm_sqr()).sum();
            let want = 0.5 * energy * (window_at(&g, i, p).powi(2) + window_at(&g, i, n).powi(2));
            assert!(
                (got - want).abs() <= 1e-9 * energy,
                "({kr},{kc}) wedge {}: {got} vs {want}",
                i + 1
            );
        }
    }
}

#[test]
fn constant_image_lives_in_the_coarsest_tile() {
    let g = geometry(32, 32, 3, 8);
    let x = Array2::from_elem((32, 32), 0.7);
    let c = fdct_forward(&x, &g).unwrap();
    let total = c.energy();
    let coarse: f64 = c.wedges()[0].iter().map(|z| z.norm_sqr()).sum();
    assert!((coarse - total).abs() <= 1e-12 * total);
}

#[test]
fn round_trip_on_awkward_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for &(h, w, j, a) in &[
        (33, 71, 4, 4),
        (64, 16, 4, 8),
        (101, 99, 5, 16),
        (8, 8, 3, 4),
        (17, 128, 4, 12),
    ] {
        let g = geometry(h, w, j, a);
        let x = Array2::from_shape_simple_fn((h, w), || rng.random_range(-1.0..1.0));
        let y = fdct_inverse(&fdct_forward(&x, &g).unwrap()).unwrap();
        let err = (&y - &x).iter().map(|v| v * v).sum::<f64>().sqrt() / x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-12, "{h}x{w} J={j} A={a}: {err}");
        let parseval = (fdct_forward(&x, &g).unwrap().energy() / x.iter().map(|v| v * v).sum::<f64>() - 1.0).abs();
        assert!(parseval <= 1e-12);
    }
}

#[test]
fn forward_is_linear() {
    let g = geometry(40, 40, 4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_simple_fn((40, 40), || rng.random::<f64>());
    let y = Array2::from_shape_simple_fn((40, 40), || rng.random::<f64>());
    let lhs = fdct_forward(&(&x * 2.0 - &y), &g).unwrap();
    let (fx, fy) = (fdct_forward(&x, &g).unwrap(), fdct_forward(&y, &g).unwrap());
    for ((l, a), b) in lhs.wedges().iter().zip(fx.wedges()).zip(fy.wedges()) {
        for ((l, a), b) in l.iter().zip(a).zip(b) {
            assert!((l - (a * 2.0 - b)).norm() <= 1e-12);
        }
    }
}

#[test]
fn wedge_metadata() {
    let g = geometry(299, 299, 5, 8);
    let idx: Vec<usize> = g.wedges().iter().map(|w| w.index).collect();
    assert_eq!(idx, (1..=42).collect::<Vec<_>>());
    assert_eq!(g.position(3, 0), Some(9));
    assert_eq!(g.wedges()[41].scale, 5);
    assert!(CurveletGeometry::new(31, 64, 5, 8).is_err());
    assert!(CurveletGeometry::new(64, 64, 2, 8).is_err());
    assert!(CurveletGeometry::new(64, 64, 4, 6).is_err());
}
