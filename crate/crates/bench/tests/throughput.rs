use taskmask_bench::throughput::{bench_throughput, ThroughputOutcome};
use taskmask_core::models::{ObfuscatorConfig, ObfuscatorModel};

fn model() -> ObfuscatorModel {
    ObfuscatorModel::init(&ObfuscatorConfig::default(), 3).unwrap()
}

#[test]
fn small_frames_report_latency_and_fps() {
    let r = bench_throughput(&model(), 64, 64, 20, u64::MAX);
    match r.outcome {
        ThroughputOutcome::Completed { median_ms, p95_ms, fps } => {
            assert!(median_ms > 0.0 && p95_ms >= median_ms);
            assert!((fps - 1e3 / median_ms).abs() < 1e-9);
        }
        other => panic!("{other:?}"),
    }
    assert!(!r.padded);
}

#[test]
fn larger_frames_are_not_faster() {
    let o = model();
    let small = bench_throughput(&o, 64, 64, 10, u64::MAX).fps().unwrap();
    let large = bench_throughput(&o, 320, 320, 3, u64::MAX).fps().unwrap();
    assert!(small >= large, "{small} vs {large}");
}

#[test]
fn unaligned_size_takes_the_pad_crop_path() {
    let r = bench_throughput(&model(), 70, 66, 2, u64::MAX);
    assert!(r.padded);
    assert!(r.fps().is_some(), "{:?}", r.outcome);
}

#[test]
fn over_budget_is_a_structured_result() {
    let r = bench_throughput(&model(), 1280, 1280, 1, 1 << 20);
    match r.outcome {
        ThroughputOutcome::OutOfMemory {
            estimated_bytes,
            limit_bytes,
        } => {
            assert_eq!(limit_bytes, 1 << 20);
            assert!(estimated_bytes > limit_bytes);
        }
        other => panic!("{other:?}"),
    }
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["outcome"]["status"], "out_of_memory");
}

#[test]
fn peak_estimate_grows_with_area() {
    let o = model();
    let a = o.infer_peak_bytes(64, 64);
    let b = o.infer_peak_bytes(128, 128);
    assert!(b > 3 * a && b < 5 * a, "{a} {b}");
}
