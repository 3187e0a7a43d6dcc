//! Grayscale heatmaps as binary PGM.

use std::io::Write;

use ndarray::Array2;

use crate::error::Result;

/// Writes `values` mapped linearly from `[lo, hi]` to 0..=255 (clamped).
pub fn write_pgm<W: Write>(w: &mut W, values: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let (rows, cols) = values.dim();
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Places arrays side by side in rows, one row per group, with a one-pixel
/// gap. Empty space is filled with `background`.
pub fn mosaic(groups: &[Vec<&Array2<f64>>], background: f64) -> Array2<f64> {
    let row_h: Vec<usize> = groups
        .iter()
        .map(|g| g.iter().map(|a| a.nrows()).max().unwrap_or(0))
        .collect();
    let row_w: Vec<usize> = groups
        .iter()
        .map(|g| g.iter().map(|a| a.ncols() + 1).sum::<usize>().saturating_sub(1))
        .collect();
    let h = row_h.iter().map(|h| h + 1).sum::<usize>().saturating_sub(1).max(1);
    let w = row_w.iter().copied().max().unwrap_or(0).max(1);
    let mut out = Array2::from_elem((h, w), background);
    let mut y = 0;
    for (g, rh) in groups.iter().zip(&row_h) {
        let mut x = 0;
        for a in g {
            out.slice_mut(ndarray::s![y..y + a.nrows(), x..x + a.ncols()]).assign(a);
            x += a.ncols() + 1;
        }
        y += rh + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_and_scaling() {
        let mut buf = Vec::new();
        write_pgm(&mut buf, &array![[0.0, 0.5, 1.0], [-3.0, 2.0, 0.25]], 0.0, 1.0).unwrap();
        assert_eq!(&buf[..11], b"P5\n3 2\n255\n");
        assert_eq!(&buf[11..], &[0, 128, 255, 0, 255, 64]);
    }

    #[test]
    fn mosaic_layout() {
        let a = Array2::from_elem((2, 2), 1.0);
        let b = Array2::from_elem((1, 3), 2.0);
        let m = mosaic(&[vec![&a, &b], vec![&b]], -1.0);
        assert_eq!(m.dim(), (4, 6));
        assert_eq!(m[[0, 3]], 2.0);
        assert_eq!(m[[1, 3]], -1.0);
        assert_eq!(m[[3, 0]], 2.0);
    }
}
