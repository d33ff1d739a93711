//! Average precision with greedy matching and all-points interpolation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{iou, oks};
use crate::types::{BBox, KeypointSet};

/// A detection is a box carrying a score.
pub type Detection = BBox;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Outcome of one prediction after matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchRecord {
    pub score: f64,
    pub tp: bool,
}

/// Greedy matching inside one frame: predictions in descending score order
/// each take the highest-similarity unmatched ground truth with similarity at
/// least `thresh`. Ties in score keep input order; ties in similarity go to
/// the lower ground-truth index.
pub fn greedy_match<P, G>(
    preds: &[P],
    gts: &[G],
    score: impl Fn(&P) -> f64,
    mut sim: impl FnMut(&P, &G) -> Result<f64>,
    thresh: f64,
) -> Result<Vec<MatchRecord>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| score(&preds[b]).total_cmp(&score(&preds[a])));
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for i in order {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let s = sim(p, g)?;
            if s >= thresh && best.is_none_or(|(_, bs)| s > bs) {
                best = Some((j, s));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
        }
        out.push(MatchRecord {
            score: score(p),
            tp: best.is_some(),
        });
    }
    Ok(out)
}

/// Precision/recall after each prediction, in descending score order.
pub fn pr_curve(records: &[MatchRecord], n_gt: usize) -> Vec<PRPoint> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut tp = 0usize;
    let mut out = Vec::with_capacity(sorted.len());
    for (k, r) in sorted.iter().enumerate() {
        if r.tp {
            tp += 1;
        }
        out.push(PRPoint {
            recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
            precision: tp as f64 / (k + 1) as f64,
        });
    }
    out
}

/// Area under the non-increasing precision envelope.
///
/// With no ground truth the AP is 1 when there are also no predictions and 0
/// otherwise.
pub fn ap_from_records(records: &[MatchRecord], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if records.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(records, n_gt);
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

fn det_score(d: &Detection) -> f64 {
    d.score.unwrap_or(0.0)
}

/// AP of one frame's (or one pooled set of) detections against boxes.
pub fn average_precision(preds: &[Detection], gts: &[BBox], iou_thresh: f64) -> f64 {
    let recs = greedy_match(preds, gts, det_score, |p, g| Ok(iou(p, g)), iou_thresh)
        .expect("iou is infallible");
    ap_from_records(&recs, gts.len())
}

/// Per-class AP pooled over frames; averaged over the classes in `classes`
/// that appear in the ground truth.
pub fn map_at(
    per_frame_preds: &[Vec<Detection>],
    per_frame_gts: &[Vec<BBox>],
    classes: &[u32],
    iou_thresh: f64,
) -> f64 {
    assert_eq!(per_frame_preds.len(), per_frame_gts.len(), "frame count mismatch");
    let mut aps = Vec::new();
    let mut any_pred = false;
    for &c in classes {
        let mut recs = Vec::new();
        let mut n_gt = 0;
        for (preds, gts) in per_frame_preds.iter().zip(per_frame_gts) {
            let p: Vec<Detection> = preds.iter().filter(|d| d.cls == c).copied().collect();
            let g: Vec<BBox> = gts.iter().filter(|b| b.cls == c).copied().collect();
            any_pred |= !p.is_empty();
            n_gt += g.len();
            recs.extend(
                greedy_match(&p, &g, det_score, |a, b| Ok(iou(a, b)), iou_thresh)
                    .expect("iou is infallible"),
            );
        }
        if n_gt > 0 {
            aps.push(ap_from_records(&recs, n_gt));
        }
    }
    if aps.is_empty() {
        return if any_pred { 0.0 } else { 1.0 };
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// mAP at IoU 0.5.
pub fn map50(per_frame_preds: &[Vec<Detection>], per_frame_gts: &[Vec<BBox>], classes: &[u32]) -> f64 {
    map_at(per_frame_preds, per_frame_gts, classes, 0.5)
}

/// Single-class keypoint AP at OKS 0.5.
pub fn oks_map50(
    per_frame_preds: &[Vec<KeypointSet>],
    per_frame_gts: &[Vec<KeypointSet>],
    sigmas: &[f64],
) -> Result<f64> {
    assert_eq!(per_frame_preds.len(), per_frame_gts.len(), "frame count mismatch");
    let mut recs = Vec::new();
    let mut n_gt = 0;
    for (preds, gts) in per_frame_preds.iter().zip(per_frame_gts) {
        n_gt += gts.len();
        recs.extend(greedy_match(
            preds,
            gts,
            |k| k.score.unwrap_or(0.0),
            |p, g| oks(p, g, sigmas),
            0.5,
        )?);
    }
    Ok(ap_from_records(&recs, n_gt))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBin {
    Small,
    Medium,
    Large,
}

impl SizeBin {
    pub const ALL: [SizeBin; 3] = [SizeBin::Small, SizeBin::Medium, SizeBin::Large];

    pub fn name(self) -> &'static str {
        match self {
            SizeBin::Small => "small",
            SizeBin::Medium => "medium",
            SizeBin::Large => "large",
        }
    }

    pub fn of(area: f64, edges: [f64; 2]) -> SizeBin {
        if area < edges[0] {
            SizeBin::Small
        } else if area < edges[1] {
            SizeBin::Medium
        } else {
            SizeBin::Large
        }
    }
}

/// COCO area thresholds for full-resolution imagery.
pub const COCO_SIZE_EDGES: [f64; 2] = [32.0 * 32.0, 96.0 * 96.0];

/// Per-bin mAP; bins without ground truth map to `None`.
///
/// Ground truth outside the bin is ignored: a prediction matching only such a
/// box is dropped, as is an unmatched prediction whose own area falls outside
/// the bin.
pub fn map_by_size(
    per_frame_preds: &[Vec<Detection>],
    per_frame_gts: &[Vec<BBox>],
    classes: &[u32],
    edges: [f64; 2],
    iou_thresh: f64,
) -> BTreeMap<SizeBin, Option<f64>> {
    assert!(edges[0] <= edges[1], "size edges must be ordered");
    let mut out = BTreeMap::new();
    for bin in SizeBin::ALL {
        let mut aps = Vec::new();
        for &c in classes {
            let mut recs = Vec::new();
            let mut n_gt = 0;
            for (preds, gts) in per_frame_preds.iter().zip(per_frame_gts) {
                let (inside, outside): (Vec<BBox>, Vec<BBox>) = gts
                    .iter()
                    .filter(|b| b.cls == c)
                    .partition(|b| SizeBin::of(b.area(), edges) == bin);
                n_gt += inside.len();
                let mut p: Vec<Detection> = preds.iter().filter(|d| d.cls == c).copied().collect();
                p.sort_by(|a, b| det_score(b).total_cmp(&det_score(a)));
                let mut taken = vec![false; inside.len()];
                for d in &p {
                    let mut best: Option<(usize, f64)> = None;
                    for (j, g) in inside.iter().enumerate() {
                        let s = iou(d, g);
                        if !taken[j] && s >= iou_thresh && best.is_none_or(|(_, bs)| s > bs) {
                            best = Some((j, s));
                        }
                    }
                    if let Some((j, _)) = best {
                        taken[j] = true;
                        recs.push(MatchRecord { score: det_score(d), tp: true });
                        continue;
                    }
                    let hits_ignored = outside.iter().any(|g| iou(d, g) >= iou_thresh);
                    if hits_ignored || SizeBin::of(d.area(), edges) != bin {
                        continue;
                    }
                    recs.push(MatchRecord { score: det_score(d), tp: false });
                }
            }
            if n_gt > 0 {
                aps.push(ap_from_records(&recs, n_gt));
            }
        }
        let v = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
        out.insert(bin, v);
    }
    out
}
