//! Comparison anonymisers: full-frame Gaussian blur and detect-then-blur.

use crate::error::{CoreError, Result};
use crate::models::image_net::reflect101;
use crate::models::utility::{Task, UtilityAdapter};
use crate::synth::CLASS_PERSON;
use crate::transform::FrameTransform;
use crate::types::{BBox, Frame};

/// Default kernel sweep for the blur curves.
pub const DEFAULT_K_GRID: [usize; 6] = [1, 5, 9, 17, 33, 65];

/// `σ = 0.3 ((k − 1) / 2 − 1) + 0.8`.
pub fn sigma_for_kernel(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(CoreError::InvalidArgument(format!("blur kernel size {k} must be odd and positive")));
    }
    Ok(())
}

pub fn gaussian_kernel(k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let s = sigma_for_kernel(k);
    let w: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * s * s)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable blur of an interleaved RGB buffer with reflect-101 borders.
fn blur_rgb(px: &[f32], w: usize, h: usize, k: usize) -> Vec<f32> {
    let kern = gaussian_kernel(k);
    let r = (k / 2) as isize;
    let mut tmp = vec![0.0f64; px.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (t, kv) in kern.iter().enumerate() {
                let sx = reflect101(x as isize + t as isize - r, w);
                let i = (y * w + sx) * 3;
                for c in 0..3 {
                    acc[c] += kv * px[i + c] as f64;
                }
            }
            tmp[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0f32; px.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (t, kv) in kern.iter().enumerate() {
                let sy = reflect101(y as isize + t as isize - r, h);
                let i = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += kv * tmp[i + c];
                }
            }
            for c in 0..3 {
                out[(y * w + x) * 3 + c] = acc[c] as f32;
            }
        }
    }
    out
}

/// Per-channel Gaussian blur of the whole frame; `k = 1` returns the input.
pub fn gaussian_blur_full(x: &Frame, k: usize) -> Result<Frame> {
    check_kernel(k)?;
    if k == 1 {
        return Ok(x.clone());
    }
    let out = blur_rgb(x.pixels(), x.width(), x.height(), k);
    Frame::from_clamped(x.id(), x.width(), x.height(), out)
}

/// Integer pixel rectangle of `b` grown by `pad_frac` of its size per side.
pub fn padded_region(b: &BBox, pad_frac: f64, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let (px, py) = (pad_frac * b.width(), pad_frac * b.height());
    let x0 = (b.x_min - px).floor().max(0.0) as usize;
    let y0 = (b.y_min - py).floor().max(0.0) as usize;
    let x1 = ((b.x_max + px).ceil().max(0.0) as usize).min(w);
    let y1 = ((b.y_max + py).ceil().max(0.0) as usize).min(h);
    (x0, y0, x1, y1)
}

/// Blurs only the padded boxes of persons detected with score ≥ `score_thresh`.
/// Pixels outside every padded box are copied unchanged.
pub fn detect_then_blur(
    x: &Frame,
    person_detector: &UtilityAdapter,
    k: usize,
    score_thresh: f64,
    pad_frac: f64,
) -> Result<Frame> {
    check_kernel(k)?;
    person_detector.expect_task(Task::Detect)?;
    let persons: Vec<BBox> = person_detector
        .detections(x)?
        .into_iter()
        .filter(|d| d.cls == CLASS_PERSON && d.score.unwrap_or(0.0) >= score_thresh)
        .collect();
    if persons.is_empty() || k == 1 {
        return Ok(x.clone());
    }
    let (w, h) = (x.width(), x.height());
    let blurred = blur_rgb(x.pixels(), w, h, k);
    let mut out = x.pixels().to_vec();
    for b in &persons {
        let (x0, y0, x1, y1) = padded_region(b, pad_frac, w, h);
        for yy in y0..y1 {
            let row = (yy * w + x0) * 3..(yy * w + x1) * 3;
            out[row.clone()].copy_from_slice(&blurred[row]);
        }
    }
    Frame::from_clamped(x.id(), w, h, out)
}

#[derive(Clone, Copy, Debug)]
pub struct Blur {
    k: usize,
}

impl Blur {
    pub fn new(k: usize) -> Result<Self> {
        check_kernel(k)?;
        Ok(Self { k })
    }
}

impl FrameTransform for Blur {
    fn apply(&self, x: &Frame) -> Frame {
        gaussian_blur_full(x, self.k).expect("kernel validated")
    }
}

#[derive(Clone, Debug)]
pub struct DetectBlur<'a> {
    detector: &'a UtilityAdapter,
    k: usize,
    pub score_thresh: f64,
    pub pad_frac: f64,
}

impl<'a> DetectBlur<'a> {
    pub fn new(detector: &'a UtilityAdapter, k: usize, score_thresh: f64, pad_frac: f64) -> Result<Self> {
        check_kernel(k)?;
        detector.expect_task(Task::Detect)?;
        Ok(Self {
            detector,
            k,
            score_thresh,
            pad_frac,
        })
    }
}

impl FrameTransform for DetectBlur<'_> {
    fn apply(&self, x: &Frame) -> Frame {
        detect_then_blur(x, self.detector, self.k, self.score_thresh, self.pad_frac).expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::quality::ssim;
    use proptest::prelude::*;

    fn textured(w: usize, h: usize, seed: u32) -> Frame {
        let px = (0..w * h * 3)
            .map(|i| ((i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed.wrapping_mul(97)) >> 22) as f32 / 1023.0)
            .collect();
        Frame::new("t", w, h, px).unwrap()
    }

    #[test]
    fn sigma_convention() {
        assert!((sigma_for_kernel(3) - 0.8).abs() < 1e-12);
        assert!((sigma_for_kernel(5) - 1.1).abs() < 1e-12);
        assert!((sigma_for_kernel(65) - 10.1).abs() < 1e-12);
    }

    #[test]
    fn kernel_matches_direct_formula() {
        // Five taps at sigma 1.1, normalised by hand.
        let s: f64 = 1.1;
        let raw: Vec<f64> = (-2i32..=2).map(|i| (-(i * i) as f64 / (2.0 * s * s)).exp()).collect();
        let z: f64 = raw.iter().sum();
        for (a, b) in gaussian_kernel(5).iter().zip(&raw) {
            assert!((a - b / z).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_constant_and_even() {
        let x = textured(20, 18, 1);
        assert_eq!(gaussian_blur_full(&x, 1).unwrap(), x);
        assert!(gaussian_blur_full(&x, 4).is_err());
        let c = Frame::filled("c", 20, 18, [0.2, 0.5, 0.9]).unwrap();
        for k in [3, 9, 65] {
            let b = gaussian_blur_full(&c, k).unwrap();
            for (p, q) in b.pixels().iter().zip(c.pixels()) {
                assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn wider_kernels_lower_ssim() {
        for seed in 0..4 {
            let x = textured(32, 32, seed);
            let mut prev = 1.0;
            for k in DEFAULT_K_GRID {
                let s = ssim(&x, &gaussian_blur_full(&x, k).unwrap()).unwrap();
                assert!(s <= prev + 1e-12, "k={k}: {s} > {prev}");
                prev = s;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn interior_mean_is_preserved(seed in 0u32..1000, k in prop::sample::select(vec![3usize, 5, 9])) {
            // A flat frame with a centered texture patch: reflection at the
            // border only ever sees flat values, so the mean is preserved.
            let (w, h) = (48, 48);
            let mut px = vec![0.4f32; w * h * 3];
            let tex = textured(16, 16, seed);
            for y in 0..16 {
                for x in 0..16 {
                    for c in 0..3 {
                        px[((y + 16) * w + x + 16) * 3 + c] = tex.get(x, y, c);
                    }
                }
            }
            let f = Frame::new("f", w, h, px).unwrap();
            let b = gaussian_blur_full(&f, k).unwrap();
            prop_assert!((b.mean() - f.mean()).abs() < 1e-3);
        }
    }
}
