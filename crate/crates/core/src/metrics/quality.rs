//! Image-similarity proxies: SSIM, PSNR and MSE on `[0, 1]` frames.

use crate::error::{CoreError, Result};
use crate::types::Frame;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// PSNR reported for identical inputs.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

fn same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(CoreError::InvalidArgument(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable filtering over the "valid" region (no padding).
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w + 1 - WINDOW;
    let oh = h + 1 - WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = row[x..x + WINDOW].iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += tmp[(y + i) * ow + x] * kv;
            }
            out[y * ow + x] = s;
        }
    }
    (out, ow, oh)
}

fn channel(f: &Frame, c: usize) -> Vec<f64> {
    f.pixels().chunks_exact(3).map(|p| p[c] as f64).collect()
}

/// SSIM of two single-channel planes with values in `[0, 1]`.
pub fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    assert!(w >= WINDOW && h >= WINDOW, "plane smaller than the SSIM window");
    let k = gaussian_window();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, ow, oh) = filter_valid(a, w, h, &k);
    let (mu_b, ..) = filter_valid(b, w, h, &k);
    let (e_aa, ..) = filter_valid(&aa, w, h, &k);
    let (e_bb, ..) = filter_valid(&bb, w, h, &k);
    let (e_ab, ..) = filter_valid(&ab, w, h, &k);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    total / (ow * oh) as f64
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5) averaged over channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    let total: f64 = (0..3).map(|c| ssim_plane(&channel(a, c), &channel(b, c), w, h)).sum();
    Ok((total / 3.0).clamp(-1.0, 1.0))
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.pixels().len() as f64;
    Ok(a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` in dB; [`PSNR_IDENTICAL`] when the inputs are equal.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m == 0.0 {
        PSNR_IDENTICAL
    } else {
        10.0 * (1.0 / m).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u32) -> Frame {
        let px = (0..32 * 32 * 3)
            .map(|i| (((i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed) >> 8) % 1000) as f32 / 999.0)
            .collect();
        Frame::new("t", 32, 32, px).unwrap()
    }

    #[test]
    fn identical_frames() {
        let f = textured(1);
        assert!((ssim(&f, &f).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(psnr(&f, &f).unwrap(), PSNR_IDENTICAL);
    }

    #[test]
    fn constant_black_vs_white_is_stabilizer_ratio() {
        let a = Frame::filled("a", 20, 20, [0.0; 3]).unwrap();
        let b = Frame::filled("b", 20, 20, [1.0; 3]).unwrap();
        // Means 0 and 1, no variance: (C1 * C2) / ((1 + C1) * C2).
        let expect = C1 / (1.0 + C1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 9.999_000_099_990e-5).abs() < 1e-15);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn psnr_formula() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let (a, b) = (textured(1), textured(7));
        let s = ssim(&a, &b).unwrap();
        assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-15);
        assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn ssim_offset_invariance_within_stabilizer() {
        // Same structure shifted by a constant: contrast/structure terms are
        // unchanged, luminance term stays close to 1 for a small offset.
        let a = textured(3);
        let shifted: Vec<f32> = a.pixels().iter().map(|v| v * 0.5 + 0.25).collect();
        let b = Frame::new("b", 32, 32, shifted.clone()).unwrap();
        let c = Frame::new("c", 32, 32, shifted.iter().map(|v| v + 0.01).collect()).unwrap();
        let base = ssim(&b, &b).unwrap();
        let off = ssim(&b, &c).unwrap();
        assert!((base - off).abs() < 2e-3, "{base} vs {off}");
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = Frame::filled("a", 20, 20, [0.0; 3]).unwrap();
        let b = Frame::filled("b", 20, 21, [0.0; 3]).unwrap();
        assert!(ssim(&a, &b).is_err());
        assert!(mse(&a, &b).is_err());
    }
}
