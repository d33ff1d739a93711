//! Fast AP and OKS-AP against brute-force oracles on random tiny instances.

#[path = "common/oracle_cases.rs"]
mod oracle_cases;

use oracle_cases::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use taskmask_core::metrics::average_precision;
use taskmask_core::BBox;

#[test]
fn ap_matches_oracle_on_1000_instances() {
    ap_equivalence(1000).unwrap();
}

#[test]
fn pooled_map_matches_oracle() {
    pooled_map_equivalence(300).unwrap();
}

#[test]
fn oks_map_matches_oracle_on_200_instances() {
    oks_map_equivalence(200).unwrap();
}

fn arb_case() -> impl Strategy<Value = (u64, u32)> {
    (any::<u64>(), 1u32..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn top_scoring_true_positive_never_lowers_ap((seed, _) in arb_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, mut gts) = random_instance(&mut rng, 1);
        let before = average_precision(&detections(&preds), &gts.iter().map(|g| g.to_bbox()).collect::<Vec<_>>(), 0.5);
        // A fresh GT far from everything plus an exact top-scoring hit on it.
        let extra = IBox { x0: 100, y0: 100, x1: 104, y1: 104, cls: 0 };
        gts.push(extra);
        let mut dets = detections(&preds);
        dets.insert(0, extra.to_bbox().with_score(1.0));
        let after = average_precision(&dets, &gts.iter().map(|g| g.to_bbox()).collect::<Vec<_>>(), 0.5);
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
    }

    #[test]
    fn bottom_scoring_false_positive_never_raises_ap((seed, _) in arb_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, gts) = random_instance(&mut rng, 1);
        let gt_boxes: Vec<BBox> = gts.iter().map(|g| g.to_bbox()).collect();
        let mut dets = detections(&preds);
        let before = average_precision(&dets, &gt_boxes, 0.5);
        dets.push(BBox::new(200.0, 200.0, 203.0, 203.0, 0).unwrap().with_score(0.0));
        let after = average_precision(&dets, &gt_boxes, 0.5);
        prop_assert!(after <= before + 1e-12, "{before} -> {after}");
    }
}
