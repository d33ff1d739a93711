//! Anchor-free center-heatmap detector at output stride 4.
//!
//! Output channels: one heatmap logit per class, then box width and height in
//! grid cells, then the sub-cell center offset.

use taskmask_nn::{GraphBuilder, Graph, Init, ParamStore, Scalar, Tensor};

use super::nms::non_max_suppression;
use super::{DecodeConfig, LossWeights};
use crate::types::{Annotation, BBox};

pub const STRIDE: usize = 4;
const PRIOR_BIAS: f64 = -2.19;

pub fn build(n_classes: usize, width: usize, seed: u64) -> (Graph, ParamStore<f32>) {
    let mut params = ParamStore::new();
    let mut b = GraphBuilder::new(&mut params, 3, seed);
    let w = width;
    let x = b.input();
    let c = b.conv("c1", x, w, 3, 1);
    let c = b.relu(c);
    let c = b.conv("c2", c, 2 * w, 3, 2);
    let c = b.relu(c);
    let c = b.conv("c3", c, 3 * w, 3, 2);
    let c = b.relu(c);
    let c = b.conv("c4", c, 3 * w, 3, 1);
    let s4 = b.relu(c);
    let c = b.conv("c5", s4, 4 * w, 3, 2);
    let c = b.relu(c);
    let c = b.conv("c6", c, 4 * w, 3, 1);
    let c = b.relu(c);
    let u = b.upsample2(c);
    let u = b.concat(u, s4);
    let f = b.conv("fuse", u, 3 * w, 1, 1);
    let f = b.relu(f);
    let f = b.conv("c7", f, 3 * w, 3, 1);
    let f = b.relu(f);
    let head = b.conv_init("head", f, n_classes + 4, 1, 1, Init::HeUniform { gain: 0.5 });
    let g = b.finish(head);
    // Heatmap logits start at a low foreground prior.
    let bias = params
        .names()
        .iter()
        .position(|n| n == "head.bias")
        .expect("head bias");
    let data = params.get_mut(taskmask_nn::ParamId(bias)).data_mut();
    for v in &mut data[..n_classes] {
        *v = PRIOR_BIAS as f32;
    }
    (g, params)
}

/// Radius keeping IoU ≥ `min_overlap` for a box of `h × w` cells whose
/// corners move by up to the radius.
pub fn gaussian_radius(h: f64, w: f64, min_overlap: f64) -> f64 {
    let b1 = h + w;
    let c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).max(0.0).sqrt()) / 2.0;
    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - min_overlap) * w * h;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).max(0.0).sqrt()) / 2.0;
    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (h + w);
    let c3 = (min_overlap - 1.0) * w * h;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt()) / 2.0;
    r1.min(r2).min(r3)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterTarget {
    pub cls: usize,
    pub gx: usize,
    pub gy: usize,
    pub size: [f64; 2],
    pub offset: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub n_classes: usize,
    pub gh: usize,
    pub gw: usize,
    /// `[n_classes, gh, gw]` Gaussian-splatted centers with exact 1.0 peaks.
    pub heat: Vec<f64>,
    pub centers: Vec<CenterTarget>,
}

pub fn grid_size(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2).div_ceil(2), w.div_ceil(2).div_ceil(2))
}

pub fn targets(ann: &Annotation, n_classes: usize, h: usize, w: usize) -> Targets {
    let (gh, gw) = grid_size(h, w);
    let mut heat = vec![0.0; n_classes * gh * gw];
    let mut centers = Vec::new();
    for b in &ann.boxes {
        let cls = b.cls as usize;
        if cls >= n_classes {
            continue;
        }
        let (cx, cy) = b.center();
        let (fx, fy) = (cx / STRIDE as f64, cy / STRIDE as f64);
        let gx = (fx.floor() as usize).min(gw - 1);
        let gy = (fy.floor() as usize).min(gh - 1);
        let (bw, bh) = (b.width() / STRIDE as f64, b.height() / STRIDE as f64);
        let radius = gaussian_radius(bh, bw, 0.7).floor().max(0.0);
        let sigma = (2.0 * radius + 1.0) / 6.0;
        let r = radius as isize;
        let plane = &mut heat[cls * gh * gw..(cls + 1) * gh * gw];
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (gx as isize + dx, gy as isize + dy);
                if x < 0 || y < 0 || x >= gw as isize || y >= gh as isize {
                    continue;
                }
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                let cell = &mut plane[y as usize * gw + x as usize];
                *cell = f64::max(*cell, v);
            }
        }
        plane[gy * gw + gx] = 1.0;
        centers.push(CenterTarget {
            cls,
            gx,
            gy,
            size: [bw, bh],
            offset: [fx - gx as f64, fy - gy as f64],
        });
    }
    Targets {
        n_classes,
        gh,
        gw,
        heat,
        centers,
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Penalty-reduced focal loss (α = 2, β = 4) summed over a logit plane,
/// written into `grad` (scaled by `scale`). Returns the unscaled sum and the
/// number of positive cells.
pub fn focal_loss<S: Scalar>(logits: &[S], target: &[f64], scale: f64, grad: &mut [S]) -> (f64, usize) {
    const ALPHA: i32 = 2;
    const BETA: i32 = 4;
    let mut total = 0.0;
    let mut pos = 0;
    for ((z, &y), g) in logits.iter().zip(target).zip(grad.iter_mut()) {
        let z = z.as_f64();
        let p = 1.0 / (1.0 + (-z).exp());
        let log_p = -softplus(-z);
        let log_q = -softplus(z);
        let q = 1.0 - p;
        if y >= 1.0 {
            pos += 1;
            total += -q.powi(ALPHA) * log_p;
            *g = S::lit(scale * q.powi(ALPHA) * (ALPHA as f64 * p * log_p - q));
        } else {
            let w = (1.0 - y).powi(BETA);
            total += -w * p.powi(ALPHA) * log_q;
            *g = S::lit(scale * w * p.powi(ALPHA) * (p - ALPHA as f64 * q * log_q));
        }
    }
    (total, pos)
}

/// Total detector loss and its gradient w.r.t. the head output.
pub fn loss<S: Scalar>(out: &Tensor<S>, t: &Targets, wts: &LossWeights) -> (f64, Tensor<S>) {
    let (c, gh, gw) = out.chw();
    assert_eq!((c, gh, gw), (t.n_classes + 4, t.gh, t.gw), "detector output/target mismatch");
    let plane = gh * gw;
    let norm = (t.centers.len().max(1)) as f64;
    let mut grad = vec![S::zero(); out.len()];
    let heat_len = t.n_classes * plane;
    let (focal, _) = focal_loss(
        &out.data()[..heat_len],
        &t.heat,
        wts.heatmap / norm,
        &mut grad[..heat_len],
    );
    let mut total = wts.heatmap * focal / norm;
    for ct in &t.centers {
        let cell = ct.gy * gw + ct.gx;
        for k in 0..2 {
            for (ch, target, weight) in [
                (t.n_classes + k, ct.size[k], wts.size),
                (t.n_classes + 2 + k, ct.offset[k], wts.offset),
            ] {
                let i = ch * plane + cell;
                let d = out.data()[i].as_f64() - target;
                total += weight * d.abs() / norm;
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[i] += S::lit(weight * s / norm);
            }
        }
    }
    (total, Tensor::from_vec(out.shape(), grad))
}

/// Peaks of the class heatmaps turned into boxes, then class-wise NMS.
pub fn decode(out: &Tensor<f32>, n_classes: usize, h: usize, w: usize, cfg: &DecodeConfig) -> Vec<BBox> {
    let (_, gh, gw) = out.chw();
    let plane = gh * gw;
    let d = out.data();
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for cls in 0..n_classes {
        let logits = &d[cls * plane..(cls + 1) * plane];
        for y in 0..gh {
            for x in 0..gw {
                let z = logits[y * gw + x];
                let score = 1.0 / (1.0 + (-(z as f64)).exp());
                if score < cfg.score_thresh {
                    continue;
                }
                let mut is_peak = true;
                for ny in y.saturating_sub(1)..(y + 2).min(gh) {
                    for nx in x.saturating_sub(1)..(x + 2).min(gw) {
                        if logits[ny * gw + nx] > z {
                            is_peak = false;
                        }
                    }
                }
                if is_peak {
                    cands.push((score, cls, y * gw + x));
                }
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    cands.truncate(cfg.top_k);
    let s = STRIDE as f64;
    let dets = cands
        .into_iter()
        .filter_map(|(score, cls, cell)| {
            let (gy, gx) = ((cell / gw) as f64, (cell % gw) as f64);
            let ch = |k: usize| d[(n_classes + k) * plane + cell] as f64;
            let bw = ch(0).max(0.25) * s;
            let bh = ch(1).max(0.25) * s;
            let cx = (gx + ch(2).clamp(0.0, 1.0)) * s;
            let cy = (gy + ch(3).clamp(0.0, 1.0)) * s;
            BBox::clipped(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0, cls as u32, w, h)
                .ok()
                .map(|b| b.with_score(score))
        })
        .collect();
    non_max_suppression(dets, cfg.nms_thresh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_matches_reference_values() {
        // Values produced by the widely used CenterNet helper.
        assert!((gaussian_radius(4.0, 4.0, 0.7) - 1.093_280_212_272_604_9).abs() < 1e-9);
        assert!((gaussian_radius(10.0, 3.0, 0.7) - 1.292_785_959_500_946_5).abs() < 1e-9);
    }

    #[test]
    fn targets_have_unit_peaks_at_centers() {
        let mut ann = Annotation::empty("f");
        ann.boxes.push(BBox::new(8.0, 8.0, 24.0, 20.0, 1).unwrap());
        let t = targets(&ann, 2, 64, 64);
        assert_eq!((t.gh, t.gw), (16, 16));
        let c = &t.centers[0];
        assert_eq!((c.gx, c.gy), (4, 3));
        assert_eq!(c.size, [4.0, 3.0]);
        assert_eq!(c.offset, [0.0, 0.5]);
        assert_eq!(t.heat[256 + 3 * 16 + 4], 1.0);
        assert_eq!(t.heat.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let target = [1.0, 0.0, 0.4, 0.9, 0.0];
        let z = [0.3f64, -1.2, 0.8, 2.5, -6.0];
        let mut g = [0.0; 5];
        focal_loss(&z, &target, 1.0, &mut g);
        for i in 0..5 {
            let f = |d: f64| {
                let mut zz = z;
                zz[i] += d;
                let mut scratch = [0.0; 5];
                focal_loss(&zz, &target, 1.0, &mut scratch).0
            };
            let numeric = (f(1e-6) - f(-1e-6)) / 2e-6;
            assert!((numeric - g[i]).abs() < 1e-7, "{i}: {numeric} vs {}", g[i]);
        }
    }
}
