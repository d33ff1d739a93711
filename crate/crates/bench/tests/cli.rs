mod common;

use std::path::Path;
use std::process::{Command, Output};

use taskmask_bench::report::CURVE_COLUMNS;
use taskmask_bench::RunManifest;

fn taskmask(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskmask"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let out = taskmask(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for cmd in [
        "generate",
        "train-utility",
        "train-obfuscator",
        "attack",
        "baseline",
        "evaluate",
        "sweep",
        "plot",
        "bench",
    ] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_subcommand_or_flag_exits_two_with_usage() {
    for args in [&["frobnicate"][..], &["sweep", "--config", "x", "--bogus"], &[]] {
        let out = taskmask(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(text(&out.stderr).contains("Usage"), "{args:?}");
    }
}

#[test]
fn invalid_config_key_is_a_named_error_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[run]\nid = \"x\"\nout_dir = \"o\"\n[sweep]\nlambdaz = [1.0]\n").unwrap();
    let out = taskmask(&["sweep", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(text(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("lambdaz"));
}

#[test]
fn missing_config_file_exits_one() {
    let out = taskmask(&["generate", "--config", "/nonexistent/x.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("\"io\""));
}

#[test]
fn sweep_writes_curves_plot_and_manifest_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_tiny_config(dir.path());
    let out = dir.path().join("out");
    let run = taskmask(&["sweep", "--config", s(&cfg)]);
    assert_eq!(run.status.code(), Some(0), "{}", text(&run.stderr));

    let csv = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CURVE_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 1 + 2 + 2 + 1);
    for f in ["curves.svg", "curves.png", "size.csv", "report.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.command.name(), "sweep");
    assert!(m.config.is_some());
    assert_eq!(m.dataset_hashes.len(), 3);
    assert!(m.reports.contains_key("report") && m.reports.contains_key("curves"));
    assert!(m.verify_files(&out).unwrap().is_empty());

    let again = dir.path().join("again");
    let rerun = taskmask(&["sweep", "--manifest", s(&out.join("manifest.json")), "--out", s(&again)]);
    assert_eq!(rerun.status.code(), Some(0), "{}", text(&rerun.stderr));
    let m2 = RunManifest::load(&again.join("manifest.json")).unwrap();
    assert!(m.report_mismatches(&m2).is_empty());

    let plots = dir.path().join("plots");
    let plot = taskmask(&["plot", "--report", s(&out.join("report.json")), "--out", s(&plots)]);
    assert_eq!(plot.status.code(), Some(0), "{}", text(&plot.stderr));
    assert_eq!(
        std::fs::read(plots.join("curves.svg")).unwrap(),
        std::fs::read(out.join("curves.svg")).unwrap()
    );

    let resumed = taskmask(&["sweep", "--config", s(&cfg), "--resume", "--out", s(&dir.path().join("resumed"))]);
    assert_eq!(resumed.status.code(), Some(0));
}

#[test]
fn manifest_with_unknown_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_tiny_config(dir.path());
    let out = dir.path().join("gen");
    assert_eq!(taskmask(&["generate", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(0));
    let path = out.join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["format_version"] = 99.into();
    std::fs::write(&path, v.to_string()).unwrap();
    let r = taskmask(&["sweep", "--manifest", s(&path), "--out", s(&dir.path().join("x"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(text(&r.stderr).contains("version"));
}

#[test]
fn every_subcommand_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_tiny_config(dir.path());
    let c = s(&cfg);
    let train = dir.path().join("train");
    let ckpt = train.join("models").join("obfuscator.safetensors");
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("generate", vec![]),
        ("train-utility", vec![]),
        ("train-obfuscator", vec!["--lambda".into(), "0.5".into()]),
        ("attack", vec!["--method".into(), "blur".into(), "--knob".into(), "5".into()]),
        (
            "evaluate",
            vec!["--method".into(), "obfuscator".into(), "--checkpoint".into(), s(&ckpt).into()],
        ),
        ("baseline", vec!["--method".into(), "detect-blur".into(), "--k".into(), "9".into()]),
        ("bench", vec!["--checkpoint".into(), s(&ckpt).into()]),
    ];
    for (cmd, extra) in runs {
        let out = if cmd == "train-obfuscator" { train.clone() } else { dir.path().join(cmd) };
        let mut args = vec![cmd, "--config", c, "--out", s(&out)];
        args.extend(extra.iter().map(String::as_str));
        let r = taskmask(&args);
        assert_eq!(r.status.code(), Some(0), "{cmd}: {}", text(&r.stderr));
        let m = RunManifest::load(&out.join("manifest.json")).unwrap();
        assert_eq!(m.command.name(), cmd);
        assert!(!m.reports.is_empty() || !m.artifacts.is_empty(), "{cmd}");
    }
    let t: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bench").join("throughput.json")).unwrap()).unwrap();
    assert_eq!(t.as_array().unwrap().len(), 2);
    assert_eq!(t[1]["padded"], true);
    assert_eq!(t[1]["outcome"]["status"], "completed");
    let bad = taskmask(&["baseline", "--config", c, "--method", "identity", "--k", "3"]);
    assert_eq!(bad.status.code(), Some(1));
}
