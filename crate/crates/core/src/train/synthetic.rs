//! Seeded real/fake image pairs.
//!
//! A real image is a smooth background of Gaussian blobs plus a fixed-level
//! fine texture, per colour channel. Its fake twin has every coefficient of
//! one scale band multiplied by a factor, and nothing else changed.

use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curvelet::{fdct_forward, fdct_inverse, CurveletCoeffs, CurveletGeometry};
use crate::error::{Error, Result};
use crate::pipeline::NUM_COLOURS;
use crate::scale_masks::band_specs;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub size: usize,
    pub num_scales: usize,
    pub angles: usize,
    /// Coefficient multiplier inside the doctored band.
    pub factor: f64,
    /// Fixed band for every fake, or `None` to draw one of bands 1..=3 per pair.
    pub doctored_band: Option<usize>,
    pub blobs: usize,
    /// Half-width of the uniform pixel texture.
    pub texture: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            size: 64,
            num_scales: 4,
            angles: 8,
            factor: 1.5,
            doctored_band: None,
            blobs: 6,
            texture: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// `(3, size, size)`, values in [0, 1].
    pub image: Array3<f64>,
    /// 0 real, 1 fake.
    pub label: u8,
    pub doctored_band: Option<usize>,
    /// Shared by a real image and its fake.
    pub pair: usize,
}

fn real_channel<R: Rng>(n: usize, cfg: &SyntheticConfig, rng: &mut R) -> Array2<f64> {
    let base = rng.random_range(0.25..0.45);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..cfg.blobs)
        .map(|_| {
            let cy = rng.random_range(0.0..n as f64);
            let cx = rng.random_range(0.0..n as f64);
            let sigma = rng.random_range(n as f64 / 16.0..n as f64 / 5.0);
            let amp = rng.random_range(-0.1..0.1);
            (cy, cx, sigma, amp)
        })
        .collect();
    let mut img = Array2::from_shape_fn((n, n), |(i, j)| {
        let mut v = base;
        for &(cy, cx, s, a) in &blobs {
            let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
            v += a * (-d2 / (2.0 * s * s)).exp();
        }
        v
    });
    img.mapv_inplace(|v| v + rng.random_range(-cfg.texture..=cfg.texture));
    img
}

/// Copy of `coeffs` with every wedge outside the 1-based `members` zeroed.
pub fn restrict_to(coeffs: &CurveletCoeffs, members: &[usize]) -> CurveletCoeffs {
    let mut out = coeffs.clone();
    for (i, w) in out.wedges_mut().iter_mut().enumerate() {
        if !members.contains(&(i + 1)) {
            w.fill(Default::default());
        }
    }
    out
}

/// `x + (factor - 1) * (band component of x)`: exactly `x` when factor is 1.
pub fn doctor_channel(
    channel: &Array2<f64>,
    geometry: &Arc<CurveletGeometry>,
    band: usize,
    factor: f64,
) -> Result<Array2<f64>> {
    let specs = band_specs(geometry)?;
    let spec = specs
        .get(band.wrapping_sub(1))
        .filter(|_| band <= 3)
        .ok_or_else(|| Error::ShapeMismatch(format!("band {band} cannot be doctored")))?;
    if factor == 1.0 {
        return Ok(channel.clone());
    }
    let part = fdct_inverse(&restrict_to(&fdct_forward(channel, geometry)?, &spec.members))?;
    Ok(channel + &(part * (factor - 1.0)))
}

/// Energy of the band's coefficients.
pub fn band_energy(channel: &Array2<f64>, geometry: &Arc<CurveletGeometry>, band: usize) -> Result<f64> {
    let specs = band_specs(geometry)?;
    let c = fdct_forward(channel, geometry)?;
    Ok(specs[band - 1]
        .members
        .iter()
        .map(|&i| c.wedges()[i - 1].iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum())
}

/// `n / 2` real images and their fakes, interleaved real, fake, real, ...
pub fn make_synthetic(n: usize, cfg: &SyntheticConfig, seed: u64) -> Result<Vec<SyntheticSample>> {
    let geometry = Arc::new(CurveletGeometry::new(cfg.size, cfg.size, cfg.num_scales, cfg.angles)?);
    let specs = band_specs(&geometry)?;
    let bands: Vec<usize> = (1..=3).filter(|&b| !specs[b - 1].members.is_empty()).collect();
    if let Some(b) = cfg.doctored_band {
        if !bands.contains(&b) {
            return Err(Error::ShapeMismatch(format!(
                "band {b} is empty or invalid for this geometry"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for pair in 0..n / 2 {
        let band = cfg
            .doctored_band
            .unwrap_or_else(|| bands[rng.random_range(0..bands.len())]);
        let mut real = Array3::zeros((NUM_COLOURS, cfg.size, cfg.size));
        let mut fake = Array3::zeros((NUM_COLOURS, cfg.size, cfg.size));
        for c in 0..NUM_COLOURS {
            let ch = real_channel(cfg.size, cfg, &mut rng);
            fake.index_axis_mut(Axis(0), c)
                .assign(&doctor_channel(&ch, &geometry, band, cfg.factor)?);
            real.index_axis_mut(Axis(0), c).assign(&ch);
        }
        out.push(SyntheticSample {
            image: real,
            label: 0,
            doctored_band: None,
            pair,
        });
        out.push(SyntheticSample {
            image: fake,
            label: 1,
            doctored_band: Some(band),
            pair,
        });
    }
    Ok(out)
}

/// Splits by pair so a real image and its fake land on the same side.
/// Returns `(train, test)`.
pub fn split_pairs(
    samples: &[SyntheticSample],
    test_fraction: f64,
    seed: u64,
) -> (Vec<SyntheticSample>, Vec<SyntheticSample>) {
    let mut pairs: Vec<usize> = samples.iter().map(|s| s.pair).collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (pairs.len() as f64 * test_fraction).round() as usize;
    let test: std::collections::BTreeSet<usize> = pairs[..n_test].iter().copied().collect();
    samples.iter().cloned().partition(|s| !test.contains(&s.pair))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_factor_changes_nothing() {
        let cfg = SyntheticConfig {
            factor: 1.0,
            doctored_band: Some(2),
            ..Default::default()
        };
        let d = make_synthetic(4, &cfg, 3).unwrap();
        assert_eq!(d[0].image, d[1].image);
        assert_eq!(d[2].image, d[3].image);
    }

    #[test]
    fn deterministic_balanced_and_in_range() {
        let cfg = SyntheticConfig::default();
        let a = make_synthetic(12, &cfg, 9).unwrap();
        let b = make_synthetic(12, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|s| s.label == 1).count(), 6);
        assert!(a.iter().all(|s| s.image.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_ne!(a, make_synthetic(12, &cfg, 10).unwrap());
    }

    #[test]
    fn split_keeps_pairs_together() {
        let d = make_synthetic(20, &SyntheticConfig::default(), 1).unwrap();
        let (train, test) = split_pairs(&d, 0.2, 5);
        assert_eq!((train.len(), test.len()), (16, 4));
        for s in &test {
            assert!(!train.iter().any(|t| t.pair == s.pair));
        }
    }

    #[test]
    fn rejects_empty_band() {
        let cfg = SyntheticConfig {
            size: 16,
            num_scales: 3,
            doctored_band: Some(3),
            ..Default::default()
        };
        assert!(make_synthetic(2, &cfg, 0).is_err());
    }
}
