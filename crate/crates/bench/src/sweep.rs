//! Privacy-utility sweeps: one adversarial training per lambda, one
//! evaluation per blur kernel, all measured with the same frozen utility model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use taskmask_core::baselines::{Blur, DetectBlur};
use taskmask_core::metrics::{identity_attack, map_by_size, ssim, SizeBin};
use taskmask_core::models::utility::{train_toy_detector, train_toy_pose, UtilityReport};
use taskmask_core::models::{DeobfuscatorModel, ObfuscatorModel, Task, UtilityAdapter};
use taskmask_core::synth::{generate_dataset, person_crops, N_CLASSES};
use taskmask_core::trainer::{adversarial_train, attack_evaluate, reconstruction_quality, AttackReport, TrainConfig, TrainHistory};
use taskmask_core::transform::{FrameTransform, Identity};
use taskmask_core::{BBox, Dataset, Frame, Split};
use taskmask_nn::exec;

use crate::config::BenchConfig;
use crate::error::{read_json, write_json, BenchError, Result};

pub const REPORT_VERSION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Obfuscator,
    Blur,
    DetectBlur,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Obfuscator => "obfuscator",
            Method::Blur => "blur",
            Method::DetectBlur => "detect_blur",
        }
    }
}

/// One measured point of a privacy-utility curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub method: Method,
    /// Lambda for the obfuscator, kernel size for the blurs.
    pub knob: f64,
    /// Task metric of the frozen adapter on transformed test frames
    /// (mAP@0.5 for detection, OKS-mAP@0.5 for pose).
    pub map50: f64,
    pub attack_ssim: f64,
    pub attack_mse: f64,
    pub attack_psnr: f64,
    /// Mean SSIM between transformed and original test frames.
    pub ssim_direct: f64,
    pub identity_acc: Option<f64>,
    /// Detection only.
    pub size_map50: Option<BTreeMap<SizeBin, Option<f64>>>,
    /// Learned perceptual anonymity score; not computed by this artifact.
    pub perceptanon_ha2: Option<f64>,
    pub obfuscator_hash: Option<String>,
    pub attack_deobfuscator_hash: String,
    pub co_trained_attack_mse: Option<f64>,
    pub co_trained_too_weak: Option<bool>,
    pub history_hash: Option<String>,
}

impl TradeoffPoint {
    pub fn file_stem(method: Method, knob: f64) -> String {
        format!("{}_{knob}", method.as_str())
    }
}

/// Measurements on untransformed frames that every point is compared with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanReference {
    pub map50: f64,
    pub size_map50: Option<BTreeMap<SizeBin, Option<f64>>>,
    pub identity_acc: f64,
    /// Attack on the identity transform: the best a reconstruction attacker
    /// can do when nothing is hidden.
    pub identity_fixture_attack_ssim: f64,
    pub identity_fixture_attack_mse: f64,
    pub utility: UtilityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub lambda: f64,
    pub k: f64,
    pub obfuscator_map50: f64,
    pub blur_map50: f64,
    pub obfuscator_attack_ssim: f64,
    pub blur_attack_ssim: f64,
}

/// Obfuscator versus full-frame blur at matched attack SSIM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub tol: f64,
    pub pairs: Vec<MatchedPair>,
    /// Some matched pair has strictly higher obfuscator mAP.
    pub obfuscator_strictly_better: bool,
    /// Some matched pair has strictly higher blur mAP.
    pub blur_better_somewhere: bool,
    pub holds: bool,
}

pub fn dominance(points: &[TradeoffPoint], tol: f64) -> Dominance {
    let obf: Vec<&TradeoffPoint> = points.iter().filter(|p| p.method == Method::Obfuscator).collect();
    let blur: Vec<&TradeoffPoint> = points.iter().filter(|p| p.method == Method::Blur).collect();
    let mut pairs = Vec::new();
    for o in &obf {
        for b in &blur {
            if (o.attack_ssim - b.attack_ssim).abs() <= tol {
                pairs.push(MatchedPair {
                    lambda: o.knob,
                    k: b.knob,
                    obfuscator_map50: o.map50,
                    blur_map50: b.map50,
                    obfuscator_attack_ssim: o.attack_ssim,
                    blur_attack_ssim: b.attack_ssim,
                });
            }
        }
    }
    let better = pairs.iter().any(|p| p.obfuscator_map50 > p.blur_map50);
    let worse = pairs.iter().any(|p| p.blur_map50 > p.obfuscator_map50);
    Dominance {
        tol,
        pairs,
        obfuscator_strictly_better: better,
        blur_better_somewhere: worse,
        holds: better && !worse,
    }
}

/// Inversions along the lambda-sorted obfuscator points. Both utility and
/// attack SSIM are expected to fall as lambda grows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrend {
    pub lambdas: Vec<f64>,
    pub map_inversions: usize,
    pub ssim_inversions: usize,
    /// Endpoints ordered and at most one inversion per series.
    pub monotone: bool,
}

pub fn lambda_trend(points: &[TradeoffPoint]) -> LambdaTrend {
    let mut obf: Vec<&TradeoffPoint> = points.iter().filter(|p| p.method == Method::Obfuscator).collect();
    obf.sort_by(|a, b| a.knob.total_cmp(&b.knob));
    let rises = |f: fn(&TradeoffPoint) -> f64| obf.windows(2).filter(|w| f(w[1]) > f(w[0])).count();
    let map_inversions = rises(|p| p.map50);
    let ssim_inversions = rises(|p| p.attack_ssim);
    let ends = match (obf.first(), obf.last()) {
        (Some(a), Some(b)) => a.map50 >= b.map50 && a.attack_ssim >= b.attack_ssim,
        _ => false,
    };
    LambdaTrend {
        lambdas: obf.iter().map(|p| p.knob).collect(),
        map_inversions,
        ssim_inversions,
        monotone: ends && map_inversions <= 1 && ssim_inversions <= 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub format_version: u64,
    pub run_id: String,
    pub task: Task,
    pub dataset_hashes: BTreeMap<String, String>,
    pub utility_hash: String,
    /// The frozen adapter's hash after every point, compared with the start.
    pub utility_unchanged: bool,
    pub reference_lambda: f64,
    pub clean: CleanReference,
    pub points: Vec<TradeoffPoint>,
    pub dominance: Dominance,
    pub lambda_trend: LambdaTrend,
}

impl SweepReport {
    pub fn load(path: &Path) -> Result<Self> {
        let r: Self = read_json(path)?;
        if r.format_version != REPORT_VERSION {
            return Err(BenchError::Version {
                what: "sweep report",
                found: r.format_version,
                expected: REPORT_VERSION,
            });
        }
        Ok(r)
    }

    pub fn point(&self, method: Method, knob: f64) -> Option<&TradeoffPoint> {
        self.points.iter().find(|p| p.method == method && p.knob == knob)
    }

    /// The obfuscator point at the reference lambda.
    pub fn reference_point(&self) -> Option<&TradeoffPoint> {
        self.point(Method::Obfuscator, self.reference_lambda)
    }
}

/// Datasets and the frozen utility model shared by every point.
pub struct Prepared {
    pub cfg: BenchConfig,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub utility: UtilityAdapter,
    pub utility_report: UtilityReport,
}

impl Prepared {
    pub fn dataset_hashes(&self) -> BTreeMap<String, String> {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
            .into_iter()
            .map(|(k, d)| (k.to_string(), d.content_hash()))
            .collect()
    }
}

pub fn generate_splits(cfg: &BenchConfig) -> Result<[Dataset; 3]> {
    let [s_train, s_val, s_test] = cfg.split_specs();
    Ok([
        generate_dataset(&s_train, cfg.data.n_train, Split::Train)?,
        generate_dataset(&s_val, cfg.data.n_val, Split::Val)?,
        generate_dataset(&s_test, cfg.data.n_test, Split::Test)?,
    ])
}

pub fn train_utility(cfg: &BenchConfig, train: &Dataset, val: &Dataset) -> Result<(UtilityAdapter, UtilityReport)> {
    let mut ucfg = cfg.utility.model.clone();
    ucfg.fit.seed = cfg.utility.seed;
    Ok(match cfg.utility.task {
        Task::Detect => train_toy_detector(train, val, &ucfg)?,
        Task::Pose => train_toy_pose(train, val, &ucfg)?,
    })
}

pub fn prepare(cfg: &BenchConfig) -> Result<Prepared> {
    let [train, val, test] = generate_splits(cfg)?;
    let t = Instant::now();
    let (utility, utility_report) = train_utility(cfg, &train, &val)?;
    log::info!(
        "utility {} val metric {:.3} in {:.1}s",
        cfg.utility.task.name(),
        utility_report.val_metric,
        t.elapsed().as_secs_f64()
    );
    Ok(Prepared {
        cfg: cfg.clone(),
        train,
        val,
        test,
        utility,
        utility_report,
    })
}

fn gt_boxes(ds: &Dataset) -> Vec<Vec<BBox>> {
    ds.annotations().map(|a| a.boxes.clone()).collect()
}

/// Task metric and (for detection) the size-stratified mAP on `view(test)`.
pub fn utility_metrics(
    p: &Prepared,
    view: &(dyn Fn(&Frame) -> Frame + Sync),
) -> Result<(f64, Option<BTreeMap<SizeBin, Option<f64>>>)> {
    let metric = p.utility.evaluate_with(&p.test, view)?;
    if p.utility.task != Task::Detect {
        return Ok((metric, None));
    }
    let preds = exec::par_map(p.test.frames(), |f| p.utility.detections(&view(f)))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let classes: Vec<u32> = (0..N_CLASSES as u32).collect();
    let bins = map_by_size(&preds, &gt_boxes(&p.test), &classes, p.cfg.data.spec.size_bins(), 0.5);
    Ok((metric, Some(bins)))
}

pub fn identity_accuracy(p: &Prepared, t: &dyn FrameTransform) -> Result<f64> {
    let pad = p.cfg.privacy.crop_pad;
    let crops = |ds: &Dataset| -> Result<Vec<(Frame, u32)>> {
        Ok(person_crops(&t.apply_dataset(ds), pad)?
            .into_iter()
            .map(|c| (c.frame, c.identity))
            .collect())
    };
    Ok(identity_attack(
        &crops(&p.train)?,
        &crops(&p.test)?,
        p.cfg.data.spec.n_identities,
        &p.cfg.privacy.identity,
    )?)
}

pub fn mean_direct_ssim(ds: &Dataset, t: &dyn FrameTransform) -> Result<f64> {
    let v = exec::par_map(ds.frames(), |f| ssim(&t.apply(f), f))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
}

pub fn clean_reference(p: &Prepared) -> Result<CleanReference> {
    let (map50, size_map50) = utility_metrics(p, &|f| f.clone())?;
    let attack = attack_evaluate(&Identity, &p.train, &p.test, &p.cfg.attack)?;
    Ok(CleanReference {
        map50,
        size_map50,
        identity_acc: identity_accuracy(p, &Identity)?,
        identity_fixture_attack_ssim: attack.final_test_ssim,
        identity_fixture_attack_mse: attack.final_test_recon_mse,
        utility: p.utility_report.clone(),
    })
}

fn base_point(
    p: &Prepared,
    method: Method,
    knob: f64,
    t: &dyn FrameTransform,
    attack: &AttackReport,
    identity: bool,
) -> Result<TradeoffPoint> {
    let (map50, size_map50) = utility_metrics(p, &|f| t.apply(f))?;
    Ok(TradeoffPoint {
        method,
        knob,
        map50,
        attack_ssim: attack.final_test_ssim,
        attack_mse: attack.final_test_recon_mse,
        attack_psnr: attack.final_test_psnr,
        ssim_direct: mean_direct_ssim(&p.test, t)?,
        identity_acc: if identity { Some(identity_accuracy(p, t)?) } else { None },
        size_map50,
        perceptanon_ha2: None,
        obfuscator_hash: None,
        attack_deobfuscator_hash: attack.deobfuscator_hash.clone(),
        co_trained_attack_mse: None,
        co_trained_too_weak: None,
        history_hash: None,
    })
}

/// Adversarially trains an obfuscator at `lambda` from the configured seeds.
pub fn train_obfuscator(
    p: &Prepared,
    lambda: f64,
    checkpoints: Option<&Path>,
) -> Result<(ObfuscatorModel, DeobfuscatorModel, TrainHistory, TrainConfig)> {
    let cfg = &p.cfg;
    let o = ObfuscatorModel::init(&cfg.obfuscator, cfg.seeds.obfuscator)?;
    let d = DeobfuscatorModel::init(cfg.deobfuscator.arch(&cfg.obfuscator)?, cfg.seeds.deobfuscator);
    let tc = TrainConfig {
        lambda,
        ..cfg.train.clone()
    };
    let t = Instant::now();
    let (o, d, history) = adversarial_train(o, &p.utility, d, &p.train, &tc, checkpoints)?;
    log::info!("lambda {lambda}: trained in {:.1}s", t.elapsed().as_secs_f64());
    Ok((o, d, history, tc))
}

/// Mean reconstruction MSE and SSIM of the co-trained adversary on test.
pub fn co_trained_quality(p: &Prepared, o: &ObfuscatorModel, d: &DeobfuscatorModel) -> Result<(f64, f64)> {
    let pairs: Vec<(Frame, Frame)> = exec::par_map(p.test.frames(), |f| (o.obfuscate(f), f.clone()));
    Ok(reconstruction_quality(&pairs, d)?)
}

/// Trains an obfuscator at `lambda` and measures it. Models and the loss
/// history land in `out/models` and `out/points`.
pub fn obfuscator_point(p: &Prepared, lambda: f64, out: Option<&Path>) -> Result<(TradeoffPoint, ObfuscatorModel)> {
    let cfg = &p.cfg;
    let stem = TradeoffPoint::file_stem(Method::Obfuscator, lambda);
    let ckpt = out.map(|o| o.join("checkpoints").join(&stem));
    let (o, d, history, tc) = train_obfuscator(p, lambda, ckpt.as_deref())?;
    if let Some(out) = out {
        o.export(&out.join("models").join(format!("{stem}.safetensors")))?;
        history.persist(&out.join("points").join(&stem), &tc)?;
    }
    let (co_mse, _) = co_trained_quality(p, &o, &d)?;
    let attack = attack_evaluate(&o, &p.train, &p.test, &cfg.attack)?;
    let identity = cfg.privacy.identity_every_point || lambda == cfg.reference_lambda();
    let mut point = base_point(p, Method::Obfuscator, lambda, &o, &attack, identity)?;
    point.obfuscator_hash = Some(o.hash());
    point.co_trained_attack_mse = Some(co_mse);
    point.co_trained_too_weak = Some(attack.co_trained_too_weak(co_mse));
    point.history_hash = Some(history.content_hash());
    if attack.co_trained_too_weak(co_mse) {
        log::warn!("lambda {lambda}: fresh attacker beats the co-trained adversary by more than 10%");
    }
    Ok((point, o))
}

/// Measures a fixed transform (a blur baseline).
pub fn transform_point(
    p: &Prepared,
    method: Method,
    knob: f64,
    t: &dyn FrameTransform,
    identity: bool,
) -> Result<TradeoffPoint> {
    let attack = attack_evaluate(t, &p.train, &p.test, &p.cfg.attack)?;
    base_point(p, method, knob, t, &attack, identity)
}

#[derive(Clone, Copy, Debug)]
struct PointSpec {
    method: Method,
    knob: f64,
}

fn point_path(out: &Path, spec: PointSpec) -> PathBuf {
    out.join("points").join(format!("{}.json", TradeoffPoint::file_stem(spec.method, spec.knob)))
}

fn run_point(p: &Prepared, spec: PointSpec, clean: &CleanReference, out: Option<&Path>) -> Result<TradeoffPoint> {
    let cfg = &p.cfg;
    let every = cfg.privacy.identity_every_point;
    let point = match spec.method {
        Method::Obfuscator => obfuscator_point(p, spec.knob, out)?.0,
        Method::Blur => {
            let k = spec.knob as usize;
            if k == 1 {
                // The identity transform: reuse the reference measurements.
                let attack = AttackReport {
                    final_test_recon_mse: clean.identity_fixture_attack_mse,
                    final_test_ssim: clean.identity_fixture_attack_ssim,
                    final_test_psnr: taskmask_core::metrics::quality::psnr_from_mse(clean.identity_fixture_attack_mse),
                    curves: Vec::new(),
                    deobfuscator_hash: String::new(),
                };
                let mut pt = base_point(p, Method::Blur, 1.0, &Identity, &attack, false)?;
                pt.identity_acc = every.then_some(clean.identity_acc);
                pt
            } else {
                transform_point(p, Method::Blur, spec.knob, &Blur::new(k)?, every)?
            }
        }
        Method::DetectBlur => {
            let t = DetectBlur::new(
                &p.utility,
                spec.knob as usize,
                cfg.sweep.detect_blur_thresh,
                cfg.sweep.detect_blur_pad,
            )?;
            transform_point(p, Method::DetectBlur, spec.knob, &t, every)?
        }
    };
    if let Some(out) = out {
        write_json(&point_path(out, spec), &point)?;
    }
    Ok(point)
}

/// Runs every configured point. With `out`, each point is written as soon as
/// it finishes; with `resume`, points already on disk are loaded instead.
pub fn run_sweep_prepared(p: &Prepared, out: Option<&Path>, resume: bool) -> Result<SweepReport> {
    let cfg = &p.cfg;
    let utility_hash = p.utility.hash();
    let clean = clean_reference(p)?;
    let mut specs = Vec::new();
    for &l in &cfg.sweep.lambdas {
        specs.push(PointSpec {
            method: Method::Obfuscator,
            knob: l,
        });
    }
    for &k in &cfg.sweep.blur_k {
        specs.push(PointSpec {
            method: Method::Blur,
            knob: k as f64,
        });
    }
    if cfg.utility.task == Task::Detect {
        for &k in &cfg.sweep.detect_blur_k {
            specs.push(PointSpec {
                method: Method::DetectBlur,
                knob: k as f64,
            });
        }
    }
    let mut points: Vec<Option<TradeoffPoint>> = vec![None; specs.len()];
    if let (Some(out), true) = (out, resume) {
        for (slot, &spec) in points.iter_mut().zip(&specs) {
            let path = point_path(out, spec);
            if path.exists() {
                *slot = Some(read_json(&path)?);
                log::info!("resumed {}", path.display());
            }
        }
    }
    let todo: Vec<usize> = (0..specs.len()).filter(|&i| points[i].is_none()).collect();
    let specs = &specs;
    for chunk in todo.chunks(cfg.sweep.parallelism) {
        let results: Vec<Result<TradeoffPoint>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let clean = &clean;
                    s.spawn(move || run_point(p, specs[i], clean, out))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep point panicked")).collect()
        });
        for (&i, r) in chunk.iter().zip(results) {
            points[i] = Some(r?);
        }
    }
    let points: Vec<TradeoffPoint> = points.into_iter().map(|p| p.expect("every point ran")).collect();
    let dominance = dominance(&points, cfg.sweep.match_tol);
    let lambda_trend = lambda_trend(&points);
    Ok(SweepReport {
        format_version: REPORT_VERSION,
        run_id: cfg.run.id.clone(),
        task: cfg.utility.task,
        dataset_hashes: p.dataset_hashes(),
        utility_unchanged: p.utility.hash() == utility_hash,
        utility_hash,
        reference_lambda: cfg.reference_lambda(),
        clean,
        points,
        dominance,
        lambda_trend,
    })
}

pub fn run_sweep(cfg: &BenchConfig, out: Option<&Path>, resume: bool) -> Result<SweepReport> {
    let p = prepare(cfg)?;
    if let Some(out) = out {
        p.utility.export(
            &out.join("models").join("utility.safetensors"),
            serde_json::json!({ "source": "sweep", "run": cfg.run.id }),
        )?;
    }
    run_sweep_prepared(&p, out, resume)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(method: Method, knob: f64, map50: f64, attack_ssim: f64) -> TradeoffPoint {
        TradeoffPoint {
            method,
            knob,
            map50,
            attack_ssim,
            attack_mse: 0.0,
            attack_psnr: 0.0,
            ssim_direct: 0.0,
            identity_acc: None,
            size_map50: None,
            perceptanon_ha2: None,
            obfuscator_hash: None,
            attack_deobfuscator_hash: String::new(),
            co_trained_attack_mse: None,
            co_trained_too_weak: None,
            history_hash: None,
        }
    }

    #[test]
    fn dominance_needs_a_matched_strict_win() {
        let pts = vec![
            pt(Method::Obfuscator, 1.0, 0.9, 0.40),
            pt(Method::Blur, 33.0, 0.2, 0.43),
            pt(Method::Blur, 5.0, 0.95, 0.85),
        ];
        let d = dominance(&pts, 0.05);
        assert_eq!(d.pairs.len(), 1);
        assert!(d.holds);
    }

    #[test]
    fn dominance_fails_without_matches_or_on_a_blur_win() {
        let pts = vec![pt(Method::Obfuscator, 1.0, 0.9, 0.40), pt(Method::Blur, 5.0, 0.95, 0.85)];
        assert!(!dominance(&pts, 0.05).holds);
        let pts = vec![
            pt(Method::Obfuscator, 1.0, 0.9, 0.40),
            pt(Method::Obfuscator, 3.0, 0.1, 0.30),
            pt(Method::Blur, 33.0, 0.2, 0.42),
            pt(Method::Blur, 65.0, 0.15, 0.31),
        ];
        let d = dominance(&pts, 0.05);
        assert!(d.obfuscator_strictly_better && d.blur_better_somewhere && !d.holds);
    }

    #[test]
    fn lambda_trend_tolerates_one_inversion() {
        let pts = vec![
            pt(Method::Obfuscator, 10.0, 0.5, 0.2),
            pt(Method::Obfuscator, 0.0, 0.9, 0.8),
            pt(Method::Obfuscator, 1.0, 0.92, 0.5),
        ];
        let t = lambda_trend(&pts);
        assert_eq!(t.lambdas, vec![0.0, 1.0, 10.0]);
        assert_eq!((t.map_inversions, t.ssim_inversions), (1, 0));
        assert!(t.monotone);
        let pts = vec![pt(Method::Obfuscator, 0.0, 0.5, 0.8), pt(Method::Obfuscator, 1.0, 0.9, 0.5)];
        assert!(!lambda_trend(&pts).monotone);
    }

    #[test]
    fn detect_blur_points_are_not_matched() {
        let pts = vec![pt(Method::Obfuscator, 1.0, 0.9, 0.40), pt(Method::DetectBlur, 33.0, 0.95, 0.41)];
        assert!(dominance(&pts, 0.05).pairs.is_empty());
    }
}
