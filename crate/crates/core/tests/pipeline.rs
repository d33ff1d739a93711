//! End-to-end properties of training and the detect-then-blur baseline on
//! small synthetic data.

use taskmask_core::baselines::{detect_then_blur, padded_region};
use taskmask_core::models::utility::DecodeConfig;
use taskmask_core::models::{DeobfuscatorConfig, DeobfuscatorModel, ObfuscatorConfig, ObfuscatorModel, Task, UtilityAdapter, UtilityConfig};
use taskmask_core::synth::{generate_dataset, SceneSpec, CLASS_PERSON};
use taskmask_core::trainer::{adversarial_train, TrainConfig};
use taskmask_core::{Dataset, Split};

fn data(n: usize) -> Dataset {
    let spec = SceneSpec {
        image_size: [32, 32],
        ..SceneSpec::default()
    };
    generate_dataset(&spec.with_seed(11), n, Split::Train).unwrap()
}

/// Untrained detector that decodes every peak, so it reports many boxes.
fn eager_detector() -> UtilityAdapter {
    let cfg = UtilityConfig {
        width: 8,
        decode: DecodeConfig {
            score_thresh: 0.0,
            ..DecodeConfig::default()
        },
        ..UtilityConfig::default()
    };
    UtilityAdapter::init(Task::Detect, &cfg, 3).unwrap()
}

fn train_once(ds: &Dataset, u: &UtilityAdapter) -> (String, String, String) {
    let ocfg = ObfuscatorConfig {
        base_width: 4,
        depth: 1,
        ..ObfuscatorConfig::default()
    };
    let o = ObfuscatorModel::init(&ocfg, 7).unwrap();
    let d = DeobfuscatorModel::init(DeobfuscatorConfig::default().arch(&ocfg).unwrap(), 8);
    let cfg = TrainConfig {
        steps: 3,
        batch_size: 2,
        lr_o: 1e-3,
        lr_d: 1e-3,
        ..TrainConfig::default()
    };
    let (o, d, h) = adversarial_train(o, u, d, ds, &cfg, None).unwrap();
    assert_eq!(h.records.len(), 3);
    assert_eq!(h.utility_hash, u.hash());
    (o.hash(), d.hash(), h.content_hash())
}

#[test]
fn adversarial_training_is_deterministic_and_leaves_utility_frozen() {
    let ds = data(6);
    let u = eager_detector();
    let before = u.hash();
    let a = train_once(&ds, &u);
    let b = train_once(&ds, &u);
    assert_eq!(a, b);
    assert_eq!(u.hash(), before);
}

#[test]
fn detect_then_blur_changes_only_detected_person_regions() {
    let ds = data(4);
    let u = eager_detector();
    let pad = 0.1;
    let mut blurred_any = false;
    for f in ds.frames() {
        let persons: Vec<_> = u.detections(f).unwrap().into_iter().filter(|d| d.cls == CLASS_PERSON).collect();
        let out = detect_then_blur(f, &u, 9, 0.0, pad).unwrap();
        let (w, h) = (f.width(), f.height());
        let inside = |x: usize, y: usize| {
            persons.iter().any(|b| {
                let (x0, y0, x1, y1) = padded_region(b, pad, w, h);
                (x0..x1).contains(&x) && (y0..y1).contains(&y)
            })
        };
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    if !inside(x, y) {
                        assert_eq!(out.get(x, y, c), f.get(x, y, c), "pixel ({x},{y}) outside every box changed");
                    }
                }
            }
        }
        blurred_any |= out.pixels() != f.pixels();
        // Identity kernel and an unreachable threshold leave the frame alone.
        assert_eq!(detect_then_blur(f, &u, 1, 0.0, pad).unwrap().pixels(), f.pixels());
        assert_eq!(detect_then_blur(f, &u, 9, 1.1, pad).unwrap().pixels(), f.pixels());
    }
    assert!(blurred_any, "fixture produced no person detections");
}
