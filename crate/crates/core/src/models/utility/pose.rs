//! Heatmap pose model at output stride 2.
//!
//! Output channels: one heatmap per joint, a person-center logit, then the
//! person box width and height in grid cells. Grid cell `g` is centered on
//! pixel coordinate `2 (g + 0.5)`.

use taskmask_nn::{Graph, GraphBuilder, Init, ParamId, ParamStore, Scalar, Tensor};

use super::detect::{focal_loss, gaussian_radius};
use super::nms::non_max_suppression;
use super::{DecodeConfig, LossWeights};
use crate::types::{Annotation, BBox, Joint, KeypointSet};

pub const STRIDE: usize = 2;
const JOINT_SIGMA_CELLS: f64 = 1.0;
const PRIOR_BIAS: f32 = -2.19;

pub fn build(n_joints: usize, width: usize, seed: u64) -> (Graph, ParamStore<f32>) {
    let mut params = ParamStore::new();
    let mut b = GraphBuilder::new(&mut params, 3, seed);
    let w = width;
    let x = b.input();
    let c = b.conv("c1", x, w, 3, 1);
    let c = b.relu(c);
    let c = b.conv("c2", c, 2 * w, 3, 2);
    let s2 = b.relu(c);
    let c = b.conv("c3", s2, 3 * w, 3, 2);
    let c = b.relu(c);
    let c = b.conv("c4", c, 3 * w, 3, 1);
    let s4 = b.relu(c);
    let c = b.conv("c5", s4, 4 * w, 3, 2);
    let c = b.relu(c);
    let c = b.conv("c6", c, 4 * w, 3, 1);
    let c = b.relu(c);
    let u = b.upsample2(c);
    let u = b.concat(u, s4);
    let f = b.conv("fuse4", u, 3 * w, 1, 1);
    let f = b.relu(f);
    let f = b.conv("c7", f, 3 * w, 3, 1);
    let f = b.relu(f);
    let u = b.upsample2(f);
    let u = b.concat(u, s2);
    let f = b.conv("fuse2", u, 2 * w, 1, 1);
    let f = b.relu(f);
    let f = b.conv("c8", f, 2 * w, 3, 1);
    let f = b.relu(f);
    let head = b.conv_init("head", f, n_joints + 3, 1, 1, Init::HeUniform { gain: 0.5 });
    let g = b.finish(head);
    let bias = params.names().iter().position(|n| n == "head.bias").expect("head bias");
    params.get_mut(ParamId(bias)).data_mut()[n_joints] = PRIOR_BIAS;
    (g, params)
}

pub fn grid_size(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

fn to_grid(px: f64) -> f64 {
    px / STRIDE as f64 - 0.5
}

fn to_pixel(g: f64) -> f64 {
    STRIDE as f64 * (g + 0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub n_joints: usize,
    pub gh: usize,
    pub gw: usize,
    /// `[n_joints, gh, gw]`.
    pub joints: Vec<f64>,
    /// `[gh, gw]` with exact 1.0 at person centers.
    pub center: Vec<f64>,
    /// `(cell, [w, h])` in grid units.
    pub sizes: Vec<(usize, [f64; 2])>,
}

pub fn targets(ann: &Annotation, n_joints: usize, h: usize, w: usize) -> Targets {
    let (gh, gw) = grid_size(h, w);
    let plane = gh * gw;
    let mut joints = vec![0.0; n_joints * plane];
    let mut center = vec![0.0; plane];
    let mut sizes = Vec::new();
    let persons: Vec<&BBox> = ann.boxes_of(crate::synth::CLASS_PERSON).collect();
    for kps in &ann.keypoints {
        for (j, joint) in kps.joints.iter().enumerate().take(n_joints) {
            if joint.v == 0 {
                continue;
            }
            let (gx, gy) = (to_grid(joint.x), to_grid(joint.y));
            let r = (3.0 * JOINT_SIGMA_CELLS).ceil() as isize;
            let (cx, cy) = (gx.round() as isize, gy.round() as isize);
            for y in (cy - r).max(0)..=(cy + r).min(gh as isize - 1) {
                for x in (cx - r).max(0)..=(cx + r).min(gw as isize - 1) {
                    let d2 = (x as f64 - gx).powi(2) + (y as f64 - gy).powi(2);
                    let v = (-d2 / (2.0 * JOINT_SIGMA_CELLS * JOINT_SIGMA_CELLS)).exp();
                    let cell = &mut joints[j * plane + y as usize * gw + x as usize];
                    *cell = f64::max(*cell, v);
                }
            }
        }
    }
    for b in persons {
        let (cx, cy) = b.center();
        let gx = ((cx / STRIDE as f64).floor() as usize).min(gw - 1);
        let gy = ((cy / STRIDE as f64).floor() as usize).min(gh - 1);
        let (bw, bh) = (b.width() / STRIDE as f64, b.height() / STRIDE as f64);
        let radius = gaussian_radius(bh, bw, 0.7).floor().max(0.0);
        let sigma = (2.0 * radius + 1.0) / 6.0;
        let r = radius as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (gx as isize + dx, gy as isize + dy);
                if x < 0 || y < 0 || x >= gw as isize || y >= gh as isize {
                    continue;
                }
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                let cell = &mut center[y as usize * gw + x as usize];
                *cell = f64::max(*cell, v);
            }
        }
        center[gy * gw + gx] = 1.0;
        sizes.push((gy * gw + gx, [bw, bh]));
    }
    Targets {
        n_joints,
        gh,
        gw,
        joints,
        center,
        sizes,
    }
}

/// Joint-heatmap squared error plus center focal loss and box-size L1, all
/// normalised by the number of persons.
pub fn loss<S: Scalar>(out: &Tensor<S>, t: &Targets, wts: &LossWeights) -> (f64, Tensor<S>) {
    let (c, gh, gw) = out.chw();
    assert_eq!((c, gh, gw), (t.n_joints + 3, t.gh, t.gw), "pose output/target mismatch");
    let plane = gh * gw;
    let norm = t.sizes.len().max(1) as f64;
    let d = out.data();
    let mut grad = vec![S::zero(); out.len()];
    let jl = t.n_joints * plane;
    let mut total = 0.0;
    for i in 0..jl {
        let e = d[i].as_f64() - t.joints[i];
        total += wts.heatmap * e * e / norm;
        grad[i] = S::lit(wts.heatmap * 2.0 * e / norm);
    }
    let (focal, _) = focal_loss(&d[jl..jl + plane], &t.center, wts.heatmap / norm, &mut grad[jl..jl + plane]);
    total += wts.heatmap * focal / norm;
    for &(cell, size) in &t.sizes {
        for (k, target) in size.iter().enumerate() {
            let i = (t.n_joints + 1 + k) * plane + cell;
            let e = d[i].as_f64() - target;
            total += wts.size * e.abs() / norm;
            grad[i] += S::lit(wts.size * e.signum() * f64::from(e != 0.0) / norm);
        }
    }
    (total, Tensor::from_vec(out.shape(), grad))
}

/// Sub-cell peak position from a 1D quadratic through three samples.
pub fn quadratic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

pub fn decode(out: &Tensor<f32>, n_joints: usize, h: usize, w: usize, cfg: &DecodeConfig) -> Vec<KeypointSet> {
    let (_, gh, gw) = out.chw();
    let plane = gh * gw;
    let d = out.data();
    let center = &d[n_joints * plane..(n_joints + 1) * plane];
    let mut persons = Vec::new();
    for y in 0..gh {
        for x in 0..gw {
            let z = center[y * gw + x];
            let score = 1.0 / (1.0 + (-(z as f64)).exp());
            if score < cfg.score_thresh {
                continue;
            }
            let peak = (y.saturating_sub(1)..(y + 2).min(gh))
                .all(|ny| (x.saturating_sub(1)..(x + 2).min(gw)).all(|nx| center[ny * gw + nx] <= z));
            if !peak {
                continue;
            }
            let cell = y * gw + x;
            let bw = (d[(n_joints + 1) * plane + cell] as f64).max(0.5) * STRIDE as f64;
            let bh = (d[(n_joints + 2) * plane + cell] as f64).max(0.5) * STRIDE as f64;
            let (cx, cy) = (to_pixel(x as f64), to_pixel(y as f64));
            if let Ok(b) = BBox::clipped(
                cx - bw / 2.0,
                cy - bh / 2.0,
                cx + bw / 2.0,
                cy + bh / 2.0,
                crate::synth::CLASS_PERSON,
                w,
                h,
            ) {
                persons.push(b.with_score(score));
            }
        }
    }
    let mut persons = non_max_suppression(persons, cfg.nms_thresh);
    persons.truncate(cfg.top_k);
    persons
        .into_iter()
        .filter_map(|b| {
            let mx = 0.2 * b.width() + STRIDE as f64;
            let my = 0.2 * b.height() + STRIDE as f64;
            let gx0 = to_grid(b.x_min - mx).round().max(0.0) as usize;
            let gy0 = to_grid(b.y_min - my).round().max(0.0) as usize;
            let gx1 = (to_grid(b.x_max + mx).round().max(0.0) as usize).min(gw - 1);
            let gy1 = (to_grid(b.y_max + my).round().max(0.0) as usize).min(gh - 1);
            let joints = (0..n_joints)
                .map(|j| {
                    let hm = &d[j * plane..(j + 1) * plane];
                    let mut best = (gy0 * gw + gx0, f32::NEG_INFINITY);
                    for y in gy0..=gy1 {
                        for x in gx0..=gx1 {
                            let v = hm[y * gw + x];
                            if v > best.1 {
                                best = (y * gw + x, v);
                            }
                        }
                    }
                    let (y, x) = (best.0 / gw, best.0 % gw);
                    let at = |yy: usize, xx: usize| hm[yy * gw + xx] as f64;
                    let c = at(y, x);
                    let ox = if x > 0 && x + 1 < gw {
                        quadratic_offset(at(y, x - 1), c, at(y, x + 1))
                    } else {
                        0.0
                    };
                    let oy = if y > 0 && y + 1 < gh {
                        quadratic_offset(at(y - 1, x), c, at(y + 1, x))
                    } else {
                        0.0
                    };
                    Joint {
                        x: to_pixel(x as f64 + ox),
                        y: to_pixel(y as f64 + oy),
                        v: 1,
                    }
                })
                .collect();
            KeypointSet::new(joints, b.area())
                .ok()
                .map(|k| k.with_score(b.score.unwrap_or(0.0)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_offset_recovers_parabola_vertex() {
        // f(t) = -(t - 0.3)^2 sampled at -1, 0, 1.
        let f = |t: f64| -(t - 0.3f64).powi(2);
        assert!((quadratic_offset(f(-1.0), f(0.0), f(1.0)) - 0.3).abs() < 1e-12);
        assert_eq!(quadratic_offset(1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn grid_round_trip() {
        for px in [0.0, 1.0, 7.25, 63.5] {
            assert!((to_pixel(to_grid(px)) - px).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_targets_peak_near_joint() {
        let mut ann = Annotation::empty("f");
        ann.boxes.push(BBox::new(10.0, 10.0, 20.0, 30.0, 1).unwrap());
        let joints = vec![Joint { x: 15.0, y: 13.0, v: 1 }];
        ann.keypoints.push(KeypointSet::new(joints, 200.0).unwrap());
        let t = targets(&ann, 1, 64, 64);
        let (gh, gw) = (t.gh, t.gw);
        let best = (0..gh * gw).max_by(|&a, &b| t.joints[a].total_cmp(&t.joints[b])).unwrap();
        // Pixel (15, 13) is grid (7, 6).
        assert_eq!((best % gw, best / gw), (7, 6));
        assert_eq!(t.center[10 * gw + 7], 1.0);
        assert_eq!(t.sizes, vec![(10 * gw + 7, [5.0, 10.0])]);
    }
}
