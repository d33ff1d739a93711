//! Brute-force AP and OKS-AP oracles and the equivalence sweeps against the
//! fast implementations, shared by the oracle tests and the acceptance report.
//!
//! Boxes have integer corners so the oracle decides IoU thresholds and
//! comparisons with exact integer arithmetic. The oracle AP is an exact
//! rational computed as `(1/n_gt) * sum over TP ranks of max precision at or
//! after that rank`, a different formula from the envelope integral.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskmask_core::geometry::oks;
use taskmask_core::metrics::ap::{greedy_match, MatchRecord};
use taskmask_core::metrics::{average_precision, map50, oks_map50, Detection};
use taskmask_core::types::Joint;
use taskmask_core::{BBox, KeypointSet};

#[derive(Clone, Copy, Debug)]
pub struct IBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
    pub cls: u32,
}

impl IBox {
    fn area(&self) -> i64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn to_bbox(self) -> BBox {
        BBox::new(self.x0 as f64, self.y0 as f64, self.x1 as f64, self.y1 as f64, self.cls).unwrap()
    }
}

/// IoU as an exact fraction `(inter, union)`.
fn iou_frac(a: &IBox, b: &IBox) -> (i64, i64) {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0);
    let inter = iw * ih;
    (inter, a.area() + b.area() - inter)
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 { a } else { gcd(b, a % b) }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Q(u128, u128);

impl Q {
    fn add(self, o: Q) -> Q {
        let n = self.0 * o.1 + o.0 * self.1;
        let d = self.1 * o.1;
        let g = gcd(n, d).max(1);
        Q(n / g, d / g)
    }

    fn gt(self, o: Q) -> bool {
        self.0 * o.1 > o.0 * self.1
    }

    fn f64(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

/// Greedy matching written as an explicit pass over a score-ranked list:
/// the highest remaining score (earliest index on ties) picks the unmatched
/// GT with the largest exact IoU at or above one half (lowest index on ties).
fn oracle_match(preds: &[(IBox, u32)], gts: &[IBox]) -> Vec<(u32, bool)> {
    let mut remaining: Vec<usize> = (0..preds.len()).collect();
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut pick = 0;
        for (r, &i) in remaining.iter().enumerate() {
            if preds[i].1 > preds[remaining[pick]].1 {
                pick = r;
            }
        }
        let i = remaining.remove(pick);
        let mut best: Option<(usize, (i64, i64))> = None;
        for (j, g) in gts.iter().enumerate() {
            let (n, d) = iou_frac(&preds[i].0, g);
            if taken[j] || 2 * n < d {
                continue;
            }
            if best.is_none_or(|(_, (bn, bd))| n * bd > bn * d) {
                best = Some((j, (n, d)));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
        }
        out.push((preds[i].1, best.is_some()));
    }
    out
}

/// Exact AP of score-tagged TP/FP outcomes pooled over frames.
fn oracle_ap(mut recs: Vec<(u32, bool)>, n_gt: usize) -> Q {
    if n_gt == 0 {
        return if recs.is_empty() { Q(1, 1) } else { Q(0, 1) };
    }
    // Stable: equal scores keep the order in which they were produced.
    recs.sort_by(|a, b| b.0.cmp(&a.0));
    let mut tp = 0u128;
    let prec: Vec<Q> = recs
        .iter()
        .enumerate()
        .map(|(k, r)| {
            tp += u128::from(r.1);
            Q(tp, k as u128 + 1)
        })
        .collect();
    let mut total = Q(0, 1);
    for (k, r) in recs.iter().enumerate() {
        if r.1 {
            let best = prec[k..].iter().copied().fold(Q(0, 1), |m, p| if p.gt(m) { p } else { m });
            total = total.add(best);
        }
    }
    let g = gcd(total.0, total.1 * n_gt as u128).max(1);
    Q(total.0 / g, total.1 * n_gt as u128 / g)
}

fn random_box(rng: &mut ChaCha8Rng, classes: u32) -> IBox {
    let cls = rng.random_range(0..classes);
    let x0 = rng.random_range(0..8);
    let y0 = rng.random_range(0..8);
    IBox {
        x0,
        y0,
        x1: x0 + rng.random_range(1..6),
        y1: y0 + rng.random_range(1..6),
        cls,
    }
}

/// GT boxes plus predictions that are jittered copies of GT or free boxes.
/// Scores come from a small set so ties occur.
pub fn random_instance(rng: &mut ChaCha8Rng, classes: u32) -> (Vec<(IBox, u32)>, Vec<IBox>) {
    let gts: Vec<IBox> = (0..rng.random_range(0..=3)).map(|_| random_box(rng, classes)).collect();
    let preds = (0..rng.random_range(0..=5))
        .map(|_| {
            let b = if !gts.is_empty() && rng.random_bool(0.6) {
                let g = gts[rng.random_range(0..gts.len())];
                let dx = rng.random_range(-1..=1);
                let dy = rng.random_range(-1..=1);
                IBox {
                    x0: g.x0 + dx,
                    y0: g.y0 + dy,
                    x1: g.x1 + dx + rng.random_range(0..=1),
                    y1: g.y1 + dy,
                    cls: g.cls,
                }
            } else {
                random_box(rng, classes)
            };
            (b, rng.random_range(1..=4) * 20)
        })
        .collect();
    (preds, gts)
}

pub fn detections(preds: &[(IBox, u32)]) -> Vec<Detection> {
    preds.iter().map(|(b, s)| b.to_bbox().with_score(f64::from(*s) / 100.0)).collect()
}

/// Match sequence equal and AP within 1e-12 on `n` single-frame instances.
pub fn ap_equivalence(n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..n {
        let (preds, gts) = random_instance(&mut rng, 1);
        let dets = detections(&preds);
        let gt_boxes: Vec<BBox> = gts.iter().map(|g| g.to_bbox()).collect();
        let fast_recs = greedy_match(&dets, &gt_boxes, |d| d.score.unwrap(), |a, b| Ok(taskmask_core::geometry::iou(a, b)), 0.5).map_err(|e| e.to_string())?;
        let oracle = oracle_match(&preds, &gts);
        let fast_seq: Vec<bool> = fast_recs.iter().map(|r: &MatchRecord| r.tp).collect();
        let oracle_seq: Vec<bool> = oracle.iter().map(|r| r.1).collect();
        if fast_seq != oracle_seq {
            return Err(format!("case {case}: match sequence {fast_seq:?} vs {oracle_seq:?}"));
        }
        let want = oracle_ap(oracle, gts.len()).f64();
        let got = average_precision(&dets, &gt_boxes, 0.5);
        if !((got - want).abs() <= 1e-12) {
            return Err(format!("case {case}: fast {got} oracle {want}"));
        }
    }
    Ok(())
}

/// Class-mean mAP pooled over three frames on `n` instances.
pub fn pooled_map_equivalence(n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..n {
        let frames: Vec<_> = (0..3).map(|_| random_instance(&mut rng, 2)).collect();
        let preds: Vec<Vec<Detection>> = frames.iter().map(|(p, _)| detections(p)).collect();
        let gts: Vec<Vec<BBox>> = frames.iter().map(|(_, g)| g.iter().map(|b| b.to_bbox()).collect()).collect();
        let mut aps = Vec::new();
        let mut any_pred = false;
        for c in 0..2 {
            let mut recs = Vec::new();
            let mut n_gt = 0;
            for (p, g) in &frames {
                let p: Vec<_> = p.iter().filter(|x| x.0.cls == c).copied().collect();
                let g: Vec<_> = g.iter().filter(|x| x.cls == c).copied().collect();
                any_pred |= !p.is_empty();
                n_gt += g.len();
                recs.extend(oracle_match(&p, &g));
            }
            if n_gt > 0 {
                aps.push(oracle_ap(recs, n_gt).f64());
            }
        }
        let want = if aps.is_empty() {
            if any_pred { 0.0 } else { 1.0 }
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        };
        let got = map50(&preds, &gts, &[0, 1]);
        if !((got - want).abs() <= 1e-12) {
            return Err(format!("case {case}: fast {got} oracle {want}"));
        }
    }
    Ok(())
}

fn random_person(rng: &mut ChaCha8Rng) -> KeypointSet {
    let (cx, cy) = (rng.random_range(5.0..40.0), rng.random_range(5.0..40.0));
    let joints = (0..5)
        .map(|_| Joint {
            x: cx + rng.random_range(-6.0..6.0),
            y: cy + rng.random_range(-6.0..6.0),
            v: u8::from(rng.random_bool(0.85)),
        })
        .collect();
    KeypointSet::new(joints, rng.random_range(20.0..200.0)).unwrap()
}

fn jitter(rng: &mut ChaCha8Rng, g: &KeypointSet, spread: f64) -> KeypointSet {
    let joints = g
        .joints
        .iter()
        .map(|j| Joint {
            x: j.x + rng.random_range(-spread..spread),
            y: j.y + rng.random_range(-spread..spread),
            v: 1,
        })
        .collect();
    KeypointSet::new(joints, g.area).unwrap()
}

/// Direct OKS: mean over visible GT joints of `exp(-d^2 / (8 area sigma^2))`.
fn oracle_oks(p: &KeypointSet, g: &KeypointSet, sigma: f64) -> f64 {
    let vis: Vec<f64> = p
        .joints
        .iter()
        .zip(&g.joints)
        .filter(|(_, gj)| gj.v == 1)
        .map(|(pj, gj)| {
            let d2 = (pj.x - gj.x).powi(2) + (pj.y - gj.y).powi(2);
            (-d2 / (8.0 * g.area * sigma * sigma)).exp()
        })
        .collect();
    if vis.is_empty() { 0.0 } else { vis.iter().sum::<f64>() / vis.len() as f64 }
}

/// OKS similarity and OKS-mAP on `n` multi-frame instances.
pub fn oks_map_equivalence(n: usize) -> Result<(), String> {
    let sigma = 0.05;
    let sigmas = [sigma; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..n {
        let mut all_preds = Vec::new();
        let mut all_gts = Vec::new();
        let mut recs = Vec::new();
        let mut n_gt = 0;
        for _ in 0..rng.random_range(1..=3) {
            let gts: Vec<KeypointSet> = (0..rng.random_range(0..=3)).map(|_| random_person(&mut rng)).collect();
            let preds: Vec<KeypointSet> = (0..rng.random_range(0..=5))
                .map(|_| {
                    let k = if !gts.is_empty() && rng.random_bool(0.7) {
                        let g = &gts[rng.random_range(0..gts.len())];
                        let spread = rng.random_range(0.1..4.0);
                        jitter(&mut rng, g, spread)
                    } else {
                        random_person(&mut rng)
                    };
                    k.with_score(f64::from(rng.random_range(1..=4u32)) / 5.0)
                })
                .collect();
            // Explicit greedy pass with the oracle similarity.
            let mut remaining: Vec<usize> = (0..preds.len()).collect();
            let mut taken = vec![false; gts.len()];
            while !remaining.is_empty() {
                let mut pick = 0;
                for (r, &i) in remaining.iter().enumerate() {
                    if preds[i].score > preds[remaining[pick]].score {
                        pick = r;
                    }
                }
                let i = remaining.remove(pick);
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in gts.iter().enumerate() {
                    let s = oracle_oks(&preds[i], g, sigma);
                    let fast = oks(&preds[i], g, &sigmas).map_err(|e| e.to_string())?;
                    if !((s - fast).abs() < 1e-12) {
                        return Err(format!("case {case}: oks {fast} oracle {s}"));
                    }
                    if !taken[j] && s >= 0.5 && best.is_none_or(|(_, b)| s > b) {
                        best = Some((j, s));
                    }
                }
                if let Some((j, _)) = best {
                    taken[j] = true;
                }
                let score = (preds[i].score.unwrap() * 5.0).round() as u32;
                recs.push((score, best.is_some()));
            }
            n_gt += gts.len();
            all_preds.push(preds);
            all_gts.push(gts);
        }
        let want = oracle_ap(recs, n_gt).f64();
        let got = oks_map50(&all_preds, &all_gts, &sigmas).map_err(|e| e.to_string())?;
        if !((got - want).abs() <= 1e-12) {
            return Err(format!("case {case}: fast {got} oracle {want}"));
        }
    }
    Ok(())
}

