use std::path::Path;

use taskmask_bench::config::{BenchConfig, DEMO_CFG};
use taskmask_bench::BenchError;

#[test]
fn bundled_demo_parses_with_documented_sizes() {
    let cfg = BenchConfig::demo();
    assert_eq!((cfg.data.n_train, cfg.data.n_val, cfg.data.n_test), (500, 100, 100));
    assert_eq!(cfg.data.spec.image_size, [64, 64]);
    assert_eq!(cfg.data.spec.n_identities, 8);
    assert_eq!(cfg.sweep.blur_k, vec![1, 5, 9, 17, 33, 65]);
    assert!(cfg.sweep.lambdas.contains(&cfg.reference_lambda()));
}

#[test]
fn toml_round_trip_is_lossless() {
    let cfg = BenchConfig::demo();
    let again = BenchConfig::parse(&cfg.to_toml(), Path::new("snapshot.toml")).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn unknown_key_is_a_named_config_error() {
    let text = DEMO_CFG.replace("[sweep]\n", "[sweep]\nlambdaz = [1.0]\n");
    match BenchConfig::parse(&text, Path::new("bad.cfg")) {
        Err(BenchError::Config { path, message }) => {
            assert_eq!(path, Path::new("bad.cfg"));
            assert!(message.contains("lambdaz"), "{message}");
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn invalid_values_are_rejected() {
    let cases = [
        ("blur_k = [1, 5, 9, 17, 33, 65]", "blur_k = [1, 4]", "odd"),
        ("lambdas = [0.3, 1.0, 3.0]", "lambdas = [-1.0]", "lambda"),
        ("parallelism = 1", "parallelism = 0", "parallelism"),
        ("n_frames = [50, 5, 2, 2]", "n_frames = [50]", "same length"),
    ];
    for (from, to, needle) in cases {
        assert!(DEMO_CFG.contains(from), "{from}");
        let err = BenchConfig::parse(&DEMO_CFG.replace(from, to), Path::new("x.cfg")).unwrap_err();
        assert!(err.to_string().contains(needle), "{to}: {err}");
    }
}

#[test]
fn minimal_config_takes_defaults() {
    let cfg = BenchConfig::parse("[run]\nid = \"m\"\nout_dir = \"o\"\n", Path::new("m.cfg")).unwrap();
    assert_eq!(cfg.sweep.lambdas, vec![0.0, 1.0, 10.0]);
    assert_eq!(cfg.sweep.match_tol, 0.05);
    assert_eq!(cfg.privacy.crop_pad, 2.0);
}

#[test]
fn split_seeds_differ_and_are_stable() {
    let cfg = BenchConfig::demo();
    let [a, b, c] = cfg.split_specs();
    assert!(a.seed != b.seed && b.seed != c.seed && a.seed != c.seed);
    let [a2, _, _] = cfg.split_specs();
    assert_eq!(a.seed, a2.seed);
}
