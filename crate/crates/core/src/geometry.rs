use crate::error::{CoreError, Result};
use crate::types::{BBox, KeypointSet};

/// Default per-joint OKS sigma for the five-joint glyph skeleton.
pub const DEFAULT_JOINT_SIGMA: f64 = 0.05;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Object keypoint similarity of `pred` against `gt`.
///
/// Each visible ground-truth joint contributes `exp(-d² / (2 s² k²))` with
/// `s² = gt.area` and `k = 2σ`. Returns 0 when no ground-truth joint is visible.
pub fn oks(pred: &KeypointSet, gt: &KeypointSet, per_joint_sigma: &[f64]) -> Result<f64> {
    if pred.joints.len() != gt.joints.len() {
        return Err(CoreError::InvalidArgument(format!(
            "joint count mismatch: prediction has {}, ground truth {}",
            pred.joints.len(),
            gt.joints.len()
        )));
    }
    if per_joint_sigma.len() != gt.joints.len() {
        return Err(CoreError::InvalidArgument(format!(
            "{} sigmas for {} joints",
            per_joint_sigma.len(),
            gt.joints.len()
        )));
    }
    let s2 = gt.area;
    let mut total = 0.0;
    let mut visible = 0usize;
    for ((p, g), sigma) in pred.joints.iter().zip(&gt.joints).zip(per_joint_sigma) {
        if g.v == 0 {
            continue;
        }
        visible += 1;
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        let k = 2.0 * sigma;
        total += (-d2 / (2.0 * s2 * k * k)).exp();
    }
    if visible == 0 {
        return Ok(0.0);
    }
    Ok(total / visible as f64)
}

pub fn uniform_sigmas(joints: usize) -> Vec<f64> {
    vec![DEFAULT_JOINT_SIGMA; joints]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Joint;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1, 0).unwrap()
    }

    fn kps(points: &[(f64, f64)], area: f64) -> KeypointSet {
        KeypointSet::new(points.iter().map(|&(x, y)| Joint { x, y, v: 1 }).collect(), area).unwrap()
    }

    #[test]
    fn iou_fixtures() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &bx(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
        // Touching edges share no area.
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn oks_fixtures() {
        let gt = kps(&[(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)], 100.0);
        let sig = uniform_sigmas(3);
        assert_eq!(oks(&gt, &gt, &sig).unwrap(), 1.0);

        let far = kps(&[(1e6, 0.0), (1e6, 0.0), (1e6, 0.0)], 100.0);
        assert_eq!(oks(&far, &gt, &sig).unwrap(), 0.0);

        // One visible joint at d = s * k * sqrt(2) gives exp(-1).
        let area: f64 = 64.0;
        let k = 2.0 * DEFAULT_JOINT_SIGMA;
        let d = area.sqrt() * k * 2f64.sqrt();
        let g1 = kps(&[(0.0, 0.0)], area);
        let p1 = kps(&[(d, 0.0)], area);
        assert!((oks(&p1, &g1, &[DEFAULT_JOINT_SIGMA]).unwrap() - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn oks_ignores_invisible_and_rejects_mismatch() {
        let mut gt = kps(&[(0.0, 0.0), (10.0, 10.0)], 50.0);
        gt.joints[1].v = 0;
        let pred = kps(&[(0.0, 0.0), (99.0, 99.0)], 50.0);
        assert_eq!(oks(&pred, &gt, &uniform_sigmas(2)).unwrap(), 1.0);
        gt.joints[0].v = 0;
        assert_eq!(oks(&pred, &gt, &uniform_sigmas(2)).unwrap(), 0.0);
        let short = kps(&[(0.0, 0.0)], 50.0);
        assert!(oks(&short, &gt, &uniform_sigmas(2)).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..50.0f64, 0.0..50.0f64, 0.1..30.0f64, 0.1..30.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn oks_never_increases_with_distance(
            base in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 5),
            joint in 0usize..5,
            d1 in 0.0..10.0f64,
            extra in 0.0..10.0f64,
        ) {
            let gt = kps(&[(0.0, 0.0); 5], 80.0);
            let mut near = kps(&base, 80.0);
            let mut far = near.clone();
            near.joints[joint] = Joint { x: d1, y: 0.0, v: 1 };
            far.joints[joint] = Joint { x: d1 + extra, y: 0.0, v: 1 };
            let sig = uniform_sigmas(5);
            prop_assert!(oks(&far, &gt, &sig).unwrap() <= oks(&near, &gt, &sig).unwrap() + 1e-15);
        }
    }
}
