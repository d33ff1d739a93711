//! Deterministic synthetic scenes: textured planks (class 0) and striped
//! stick-figure persons (class 1) whose stripe texture encodes an identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{Annotation, BBox, Dataset, Frame, Joint, KeypointSet, Split};

pub const CLASS_PLANK: u32 = 0;
pub const CLASS_PERSON: u32 = 1;
pub const N_CLASSES: usize = 2;
/// Head, neck, pelvis, left foot, right foot.
pub const N_JOINTS: usize = 5;

const PLACEMENT_ATTEMPTS: usize = 200;
const REFERENCE_AREA: f64 = 64.0 * 64.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Gradient,
    Tiles,
    Blotches,
    /// One of the above, drawn per frame.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// `[height, width]`.
    pub image_size: [usize; 2],
    /// Inclusive range.
    pub n_task_objects: [u32; 2],
    /// Inclusive range.
    pub n_persons: [u32; 2],
    pub n_identities: u32,
    pub background: Background,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_size: [64, 64],
            n_task_objects: [1, 4],
            n_persons: [0, 2],
            n_identities: 8,
            background: Background::Mixed,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.image_size;
        if h < 32 || w < 32 {
            return Err(CoreError::InvalidArgument(format!("image_size {h}x{w} below 32x32")));
        }
        if self.n_identities < 2 {
            return Err(CoreError::InvalidArgument("n_identities must be at least 2".into()));
        }
        for (name, r) in [("n_task_objects", self.n_task_objects), ("n_persons", self.n_persons)] {
            if r[0] > r[1] {
                return Err(CoreError::InvalidArgument(format!("{name} range {r:?} is empty")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(CoreError::InvalidArgument("noise_std must be non-negative".into()));
        }
        Ok(())
    }

    /// Linear size factor relative to a 64×64 frame.
    fn scale(&self) -> f64 {
        ((self.image_size[0] * self.image_size[1]) as f64 / REFERENCE_AREA).sqrt()
    }

    /// Object-area band edges (small/medium, medium/large) for this image size.
    pub fn size_bins(&self) -> [f64; 2] {
        let a = (self.image_size[0] * self.image_size[1]) as f64 / REFERENCE_AREA;
        [64.0 * a, 256.0 * a]
    }
}

/// Appearance parameters of one identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityStyle {
    pub hue_deg: f64,
    pub stripe_angle_deg: f64,
    pub stripe_period: f64,
}

const PERSON_HUES: [f64; 6] = [215.0, 135.0, 330.0, 275.0, 175.0, 95.0];

pub fn identity_style(identity: u32) -> IdentityStyle {
    let group = (identity / 4) as usize;
    IdentityStyle {
        hue_deg: PERSON_HUES[group % PERSON_HUES.len()],
        stripe_angle_deg: 45.0 * (identity % 4) as f64,
        stripe_period: 3.5 + 1.0 * (group % 2) as f64 + 0.5 * ((group / PERSON_HUES.len()) % 2) as f64,
    }
}

fn mix(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identity of frame `index`: a golden-ratio sequence offset by the seed, so
/// labels stay close to uniform on any prefix of indices.
pub fn frame_identity(spec: &SceneSpec, index: u64) -> u32 {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let off = (mix(spec.seed, u64::MAX) >> 11) as f64 / (1u64 << 53) as f64;
    let u = (off + index as f64 * PHI).fract();
    ((u * spec.n_identities as f64) as u32).min(spec.n_identities - 1)
}

fn hsv(h_deg: f64, s: f64, v: f64) -> [f32; 3] {
    let h = (h_deg.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        let i = (y * self.w + x) * 3;
        self.px[i..i + 3].copy_from_slice(&c);
    }
}

fn draw_background(c: &mut Canvas, family: Background, rng: &mut ChaCha8Rng) {
    let base_hue = rng.random_range(0.0..360.0);
    let sat = rng.random_range(0.05..0.25);
    let v0 = rng.random_range(0.3..0.75);
    match family {
        Background::Gradient | Background::Mixed => {
            let v1 = (v0 + rng.random_range(-0.25..0.25f64)).clamp(0.15, 0.9);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (ca, sa) = (angle.cos(), angle.sin());
            let norm = (c.w.max(c.h)) as f64;
            for y in 0..c.h {
                for x in 0..c.w {
                    let t = (0.5 + 0.5 * ((x as f64 * ca + y as f64 * sa) / norm)).clamp(0.0, 1.0);
                    c.set(x, y, hsv(base_hue, sat, v0 + (v1 - v0) * t));
                }
            }
        }
        Background::Tiles => {
            let tile = rng.random_range(5..11usize);
            let dv = rng.random_range(0.06..0.16);
            for y in 0..c.h {
                for x in 0..c.w {
                    let odd = ((x / tile) + (y / tile)) % 2 == 1;
                    let v = if odd { v0 + dv } else { v0 - dv * 0.5 };
                    c.set(x, y, hsv(base_hue, sat, v.clamp(0.05, 0.95)));
                }
            }
        }
        Background::Blotches => {
            let cell = rng.random_range(6..12usize);
            let gw = c.w / cell + 2;
            let gh = c.h / cell + 2;
            let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-0.2..0.2)).collect();
            for y in 0..c.h {
                for x in 0..c.w {
                    let fx = x as f64 / cell as f64;
                    let fy = y as f64 / cell as f64;
                    let (ix, iy) = (fx as usize, fy as usize);
                    let (tx, ty) = (fx - ix as f64, fy - iy as f64);
                    let g = |i: usize, j: usize| grid[j * gw + i];
                    let v = g(ix, iy) * (1.0 - tx) * (1.0 - ty)
                        + g(ix + 1, iy) * tx * (1.0 - ty)
                        + g(ix, iy + 1) * (1.0 - tx) * ty
                        + g(ix + 1, iy + 1) * tx * ty;
                    c.set(x, y, hsv(base_hue, sat, (v0 + v).clamp(0.05, 0.95)));
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn overlaps(&self, o: &Rect, gap: f64) -> bool {
        self.x0 < o.x1 + gap && o.x0 < self.x1 + gap && self.y0 < o.y1 + gap && o.y0 < self.y1 + gap
    }
}

/// Integer plank size drawn from one of three area bands.
fn plank_size(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let a = spec.scale() * spec.scale();
    let bands = [(30.0 * a, 64.0 * a), (64.0 * a, 256.0 * a), (256.0 * a, 600.0 * a)];
    let (lo, hi) = bands[rng.random_range(0..3)];
    let min_side = (4.0 * spec.scale()).round().max(2.0);
    let mut best = (min_side, min_side);
    for _ in 0..64 {
        let area = rng.random_range(lo..hi);
        let aspect = rng.random_range(1.0..2.6f64);
        let long = (area * aspect).sqrt().round().max(min_side);
        let short = (area / long).round().max(min_side);
        best = (long, short);
        if long * short >= lo && long * short < hi {
            break;
        }
    }
    let (long, short) = best;
    let (w, h) = if rng.random_bool(0.5) { (long, short) } else { (short, long) };
    (w as usize, h as usize)
}

fn draw_plank(c: &mut Canvas, r: Rect, rng: &mut ChaCha8Rng) {
    let hue = rng.random_range(18.0..42.0);
    let sat = rng.random_range(0.45..0.75);
    let val = rng.random_range(0.55..0.9);
    let period = rng.random_range(2.0..4.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let horizontal = (r.x1 - r.x0) >= (r.y1 - r.y0);
    let (x0, y0, x1, y1) = (r.x0 as usize, r.y0 as usize, r.x1 as usize, r.y1 as usize);
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x == x0 || y == y0 || x + 1 == x1 || y + 1 == y1;
            let across = if horizontal { y as f64 } else { x as f64 };
            let grain = 0.12 * (std::f64::consts::TAU * across / period + phase).sin();
            let v = if edge { val * 0.6 } else { val * (1.0 + grain) };
            c.set(x, y, hsv(hue, sat, v.clamp(0.0, 1.0)));
        }
    }
}

struct Person {
    joints: [(f64, f64); N_JOINTS],
    head_r: f64,
    torso_t: f64,
    limb_t: f64,
}

impl Person {
    fn bounds(&self) -> Rect {
        let mut r = Rect {
            x0: self.joints[0].0 - self.head_r,
            y0: self.joints[0].1 - self.head_r,
            x1: self.joints[0].0 + self.head_r,
            y1: self.joints[0].1 + self.head_r,
        };
        let mut grow = |(x, y): (f64, f64), t: f64| {
            r.x0 = r.x0.min(x - t);
            r.y0 = r.y0.min(y - t);
            r.x1 = r.x1.max(x + t);
            r.y1 = r.y1.max(y + t);
        };
        for &j in &self.joints[1..3] {
            grow(j, self.torso_t / 2.0);
        }
        for &j in &self.joints[3..] {
            grow(j, self.limb_t / 2.0);
        }
        r
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        let (hx, hy) = self.joints[0];
        if (x - hx).powi(2) + (y - hy).powi(2) <= self.head_r * self.head_r {
            return true;
        }
        let seg = |a: (f64, f64), b: (f64, f64), t: f64| seg_dist(x, y, a, b) <= t / 2.0;
        seg(self.joints[1], self.joints[2], self.torso_t)
            || seg(self.joints[2], self.joints[3], self.limb_t)
            || seg(self.joints[2], self.joints[4], self.limb_t)
    }
}

fn seg_dist(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((px - a.0 - t * dx).powi(2) + (py - a.1 - t * dy).powi(2)).sqrt()
}

/// A person glyph with its top-left joint-space origin at (0, 0).
fn person_shape(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Person {
    let s = spec.scale();
    let height = rng.random_range(17.0..27.0) * s;
    let head_r = (0.13 * height).max(2.0);
    let torso_len = 0.4 * height;
    let leg_len = height - 2.0 * head_r - torso_len;
    let lean = rng.random_range(-0.15..0.15) * torso_len;
    let head = (0.0, head_r);
    let neck = (0.0, 2.0 * head_r);
    let pelvis = (lean, 2.0 * head_r + torso_len);
    let spread_l = rng.random_range(0.15..0.5) * leg_len;
    let spread_r = rng.random_range(0.15..0.5) * leg_len;
    let foot_l = (pelvis.0 - spread_l, pelvis.1 + (leg_len * leg_len - spread_l * spread_l).sqrt());
    let foot_r = (pelvis.0 + spread_r, pelvis.1 + (leg_len * leg_len - spread_r * spread_r).sqrt());
    Person {
        joints: [head, neck, pelvis, foot_l, foot_r],
        head_r,
        torso_t: (0.28 * height).max(4.0),
        limb_t: (0.12 * height).max(2.0),
    }
}

fn draw_person(c: &mut Canvas, p: &Person, style: IdentityStyle, rng: &mut ChaCha8Rng) {
    let light = hsv(style.hue_deg, 0.65, 0.92);
    let dark = hsv(style.hue_deg, 0.85, 0.42);
    let theta = style.stripe_angle_deg.to_radians();
    let (ct, st) = (theta.cos(), theta.sin());
    let phase = rng.random_range(0.0..1.0);
    let r = p.bounds();
    let (x0, y0) = (r.x0.floor().max(0.0) as usize, r.y0.floor().max(0.0) as usize);
    let (x1, y1) = ((r.x1.ceil() as usize).min(c.w), (r.y1.ceil() as usize).min(c.h));
    for y in y0..y1 {
        for x in x0..x1 {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            if !p.covers(fx, fy) {
                continue;
            }
            let u = (fx * ct + fy * st) / style.stripe_period + phase;
            let color = if u.rem_euclid(1.0) < 0.5 { light } else { dark };
            c.set(x, y, color);
        }
    }
}

/// Renders scene `index` of `spec`. Deterministic in `(spec.seed, index)`.
pub fn generate_scene(spec: &SceneSpec, index: u64, frame_id: &str) -> Result<(Frame, Annotation)> {
    spec.validate()?;
    let [h, w] = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, index));
    let mut canvas = Canvas {
        w,
        h,
        px: vec![0.0; w * h * 3],
    };
    let family = match spec.background {
        Background::Mixed => [Background::Gradient, Background::Tiles, Background::Blotches][rng.random_range(0..3)],
        f => f,
    };
    draw_background(&mut canvas, family, &mut rng);

    let n_obj = rng.random_range(spec.n_task_objects[0]..=spec.n_task_objects[1]);
    let n_persons = rng.random_range(spec.n_persons[0]..=spec.n_persons[1]);
    let identity = (n_persons > 0).then(|| frame_identity(spec, index));
    let mut placed: Vec<Rect> = Vec::new();
    let mut boxes = Vec::new();
    let mut keypoints = Vec::new();
    let margin = 1.0;

    for _ in 0..n_persons {
        let mut done = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mut p = person_shape(spec, &mut rng);
            let b = p.bounds();
            let (bw, bh) = (b.x1 - b.x0, b.y1 - b.y0);
            if bw + 2.0 * margin >= w as f64 || bh + 2.0 * margin >= h as f64 {
                continue;
            }
            let ox = rng.random_range(margin..(w as f64 - bw - margin)) - b.x0;
            let oy = rng.random_range(margin..(h as f64 - bh - margin)) - b.y0;
            for j in &mut p.joints {
                j.0 += ox;
                j.1 += oy;
            }
            let r = p.bounds();
            if placed.iter().any(|q| q.overlaps(&r, margin)) {
                continue;
            }
            let style = identity_style(identity.expect("persons imply identity"));
            draw_person(&mut canvas, &p, style, &mut rng);
            let bbox = BBox::clipped(r.x0, r.y0, r.x1, r.y1, CLASS_PERSON, w, h)?;
            let joints = p.joints.iter().map(|&(x, y)| Joint { x, y, v: 1 }).collect();
            keypoints.push(KeypointSet::new(joints, bbox.area())?);
            boxes.push(bbox);
            placed.push(r);
            done = true;
            break;
        }
        if !done {
            return Err(CoreError::Placement {
                index,
                what: "person",
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    for _ in 0..n_obj {
        let mut done = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (pw, ph) = plank_size(spec, &mut rng);
            if pw + 2 >= w || ph + 2 >= h {
                continue;
            }
            let x0 = rng.random_range(1..(w - pw)) as f64;
            let y0 = rng.random_range(1..(h - ph)) as f64;
            let r = Rect {
                x0,
                y0,
                x1: x0 + pw as f64,
                y1: y0 + ph as f64,
            };
            if placed.iter().any(|q| q.overlaps(&r, margin)) {
                continue;
            }
            draw_plank(&mut canvas, r, &mut rng);
            boxes.push(BBox::new(r.x0, r.y0, r.x1, r.y1, CLASS_PLANK)?);
            placed.push(r);
            done = true;
            break;
        }
        if !done {
            return Err(CoreError::Placement {
                index,
                what: "task object",
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).expect("valid std");
        for v in &mut canvas.px {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let frame = Frame::from_clamped(frame_id, w, h, canvas.px)?;
    Ok((
        frame,
        Annotation {
            frame_id: frame_id.to_string(),
            boxes,
            keypoints,
            identity,
        },
    ))
}

pub fn frame_id(split: Split, index: u64) -> String {
    format!("{split}_{index:05}")
}

pub fn generate_dataset(spec: &SceneSpec, n_frames: usize, split: Split) -> Result<Dataset> {
    if n_frames == 0 {
        return Err(CoreError::InvalidArgument("n_frames must be at least 1".into()));
    }
    spec.validate()?;
    let scenes = taskmask_nn::exec::par_map_range(n_frames, |i| {
        generate_scene(spec, i as u64, &frame_id(split, i as u64))
    });
    let mut frames = Vec::with_capacity(n_frames);
    let mut anns = Vec::with_capacity(n_frames);
    for s in scenes {
        let (f, a) = s?;
        frames.push(f);
        anns.push(a);
    }
    Dataset::new(frames, anns, split, Some(spec.n_identities))
}

/// A resampled person crop and the identity it shows.
#[derive(Clone, Debug)]
pub struct PersonCrop {
    pub frame: Frame,
    pub identity: u32,
    pub source: String,
    /// Integer crop bounds `[x0, y0, x1, y1]` in source pixels (may extend past the frame).
    pub bounds: [i64; 4],
}

pub const CROP_SIZE: usize = 32;

/// Crop bounds for a person box widened by `pad` pixels on every side.
pub fn crop_bounds(b: &BBox, pad: f64) -> [i64; 4] {
    [
        (b.x_min - pad).round() as i64,
        (b.y_min - pad).round() as i64,
        (b.x_max + pad).round() as i64,
        (b.y_max + pad).round() as i64,
    ]
}

/// Bilinear resample of the (possibly out-of-frame) region to `size`×`size`,
/// replicating edge pixels outside the frame.
pub fn resample_region(f: &Frame, bounds: [i64; 4], size: usize, id: &str) -> Result<Frame> {
    let [x0, y0, x1, y1] = bounds;
    let (rw, rh) = ((x1 - x0).max(1) as f64, (y1 - y0).max(1) as f64);
    let mut px = Vec::with_capacity(size * size * 3);
    let (w, h) = (f.width() as f64, f.height() as f64);
    for oy in 0..size {
        for ox in 0..size {
            let sx = (x0 as f64 + (ox as f64 + 0.5) * rw / size as f64 - 0.5).clamp(0.0, w - 1.0);
            let sy = (y0 as f64 + (oy as f64 + 0.5) * rh / size as f64 - 0.5).clamp(0.0, h - 1.0);
            let (ix, iy) = (sx.floor() as usize, sy.floor() as usize);
            let (jx, jy) = ((ix + 1).min(f.width() - 1), (iy + 1).min(f.height() - 1));
            let (tx, ty) = ((sx - ix as f64) as f32, (sy - iy as f64) as f32);
            for c in 0..3 {
                let v = f.get(ix, iy, c) * (1.0 - tx) * (1.0 - ty)
                    + f.get(jx, iy, c) * tx * (1.0 - ty)
                    + f.get(ix, jy, c) * (1.0 - tx) * ty
                    + f.get(jx, jy, c) * tx * ty;
                px.push(v);
            }
        }
    }
    Frame::from_clamped(id, size, size, px)
}

pub fn person_crops(ds: &Dataset, pad: f64) -> Result<Vec<PersonCrop>> {
    if ds.n_identities.is_none() {
        return Err(CoreError::InvalidArgument("dataset carries no identity labels".into()));
    }
    let mut out = Vec::new();
    for (f, a) in ds.iter() {
        let Some(identity) = a.identity else { continue };
        for (k, b) in a.boxes_of(CLASS_PERSON).enumerate() {
            let bounds = crop_bounds(b, pad);
            let id = format!("{}_p{k}", f.id());
            out.push(PersonCrop {
                frame: resample_region(f, bounds, CROP_SIZE, &id)?,
                identity,
                source: f.id().to_string(),
                bounds,
            });
        }
    }
    Ok(out)
}
