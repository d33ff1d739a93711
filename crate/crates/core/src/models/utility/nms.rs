use crate::geometry::iou;
use crate::metrics::Detection;

/// Greedy class-wise suppression: walk detections by descending score and drop
/// any box whose IoU with an already kept box of the same class is at least
/// `iou_thresh`. Equal scores keep their input order.
pub fn non_max_suppression(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.unwrap_or(0.0).total_cmp(&a.score.unwrap_or(0.0)));
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        if kept.iter().all(|k| k.cls != d.cls || iou(k, &d) < iou_thresh) {
            kept.push(d);
        }
    }
    kept
}
