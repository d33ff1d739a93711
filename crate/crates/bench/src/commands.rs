//! Subcommand execution. Every command writes its outputs plus a
//! `manifest.json` into one output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use taskmask_core::baselines::{Blur, DetectBlur};
use taskmask_core::dataset_io::save_dataset;
use taskmask_core::models::ObfuscatorModel;
use taskmask_core::trainer::attack_evaluate;
use taskmask_core::transform::{FrameTransform, Identity};

use crate::config::BenchConfig;
use crate::error::{write_file, write_json, BenchError, Result};
use crate::manifest::{artifact, sha256_file, RunManifest, MANIFEST_FILE};
use crate::plot::{emit_curve_plot, emit_size_plot};
use crate::report::write_sweep_outputs;
use crate::sweep::{self, Method, Prepared, SweepReport, TradeoffPoint};
use crate::throughput::bench_throughput;

/// A file the command reads, pinned by hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputRef {
    pub fn pin(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }

    fn check(&self) -> Result<()> {
        let found = sha256_file(&self.path)?;
        if found != self.sha256 {
            return Err(BenchError::Invalid(format!(
                "{} changed since the manifest was written (sha256 {found}, expected {})",
                self.path.display(),
                self.sha256
            )));
        }
        Ok(())
    }
}

/// What a command transforms frames with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Target {
    Identity,
    /// A stored checkpoint, or one trained at `lambda` when absent.
    Obfuscator {
        lambda: f64,
        checkpoint: Option<InputRef>,
    },
    Blur {
        k: usize,
    },
    DetectBlur {
        k: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    Generate,
    TrainUtility,
    TrainObfuscator { lambda: f64 },
    Attack { target: Target },
    Baseline { target: Target },
    Evaluate { target: Target },
    Sweep { resume: bool },
    Plot { report: InputRef },
    Bench { checkpoint: Option<InputRef> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::TrainUtility => "train-utility",
            Command::TrainObfuscator { .. } => "train-obfuscator",
            Command::Attack { .. } => "attack",
            Command::Baseline { .. } => "baseline",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Plot { .. } => "plot",
            Command::Bench { .. } => "bench",
        }
    }

    pub fn needs_config(&self) -> bool {
        !matches!(self, Command::Plot { .. })
    }
}

enum Built<'a> {
    Identity,
    Obfuscator(Box<ObfuscatorModel>),
    Blur(Blur),
    DetectBlur(DetectBlur<'a>),
}

impl Built<'_> {
    fn transform(&self) -> &dyn FrameTransform {
        match self {
            Built::Identity => &Identity,
            Built::Obfuscator(o) => o.as_ref(),
            Built::Blur(b) => b,
            Built::DetectBlur(d) => d,
        }
    }
}

struct Run<'a> {
    out: &'a Path,
    manifest: RunManifest,
}

impl Run<'_> {
    fn report(&mut self, name: &str, path: &Path) -> Result<()> {
        self.manifest.reports.insert(name.into(), artifact(self.out, path)?);
        Ok(())
    }

    fn artifact(&mut self, name: &str, path: &Path) -> Result<()> {
        self.manifest.artifacts.insert(name.into(), artifact(self.out, path)?);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.out.join(format!("{name}.json"));
        write_json(&path, value)?;
        self.report(name, &path)
    }

    fn prepared(&mut self, cfg: &BenchConfig) -> Result<Prepared> {
        let p = sweep::prepare(cfg)?;
        self.manifest.dataset_hashes = p.dataset_hashes();
        self.manifest.model_hashes.insert("utility".into(), p.utility.hash());
        Ok(p)
    }

    fn build<'p>(&mut self, p: &'p Prepared, target: &Target) -> Result<Built<'p>> {
        Ok(match target {
            Target::Identity => Built::Identity,
            Target::Obfuscator { lambda, checkpoint } => {
                let o = match checkpoint {
                    Some(c) => {
                        c.check()?;
                        ObfuscatorModel::import(&c.path)?
                    }
                    None => sweep::train_obfuscator(p, *lambda, None)?.0,
                };
                self.manifest.model_hashes.insert("obfuscator".into(), o.hash());
                Built::Obfuscator(Box::new(o))
            }
            Target::Blur { k } => Built::Blur(Blur::new(*k)?),
            Target::DetectBlur { k } => Built::DetectBlur(DetectBlur::new(
                &p.utility,
                *k,
                p.cfg.sweep.detect_blur_thresh,
                p.cfg.sweep.detect_blur_pad,
            )?),
        })
    }
}

fn config_for<'c>(cmd: &Command, cfg: Option<&'c BenchConfig>) -> Result<&'c BenchConfig> {
    cfg.ok_or_else(|| BenchError::Invalid(format!("{} needs a config", cmd.name())))
}

/// Runs `cmd` into `out` and returns the manifest it wrote.
pub fn execute(cmd: &Command, cfg: Option<&BenchConfig>, out: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let run_id = cfg.map(|c| c.run.id.clone()).unwrap_or_else(|| cmd.name().to_string());
    let snapshot = if cmd.needs_config() { cfg.cloned() } else { None };
    let mut run = Run {
        out,
        manifest: RunManifest::new(cmd.clone(), snapshot, run_id),
    };
    std::fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
    match cmd {
        Command::Generate => {
            let cfg = config_for(cmd, cfg)?;
            let splits = sweep::generate_splits(cfg)?;
            let mut summary = BTreeMap::new();
            for ds in &splits {
                let name = ds.split.to_string();
                save_dataset(ds, &out.join("data").join(&name))?;
                run.manifest.dataset_hashes.insert(name.clone(), ds.content_hash());
                summary.insert(name, serde_json::json!({ "frames": ds.len(), "content_hash": ds.content_hash() }));
            }
            run.json("datasets", &summary)?;
        }
        Command::TrainUtility => {
            let cfg = config_for(cmd, cfg)?;
            let p = run.prepared(cfg)?;
            let path = out.join("models").join("utility.safetensors");
            p.utility
                .export(&path, serde_json::json!({ "source": "train-utility", "run": cfg.run.id }))?;
            run.artifact("utility_model", &path)?;
            run.json("utility", &p.utility_report)?;
        }
        Command::TrainObfuscator { lambda } => {
            let cfg = config_for(cmd, cfg)?;
            let p = run.prepared(cfg)?;
            let (o, d, history, tc) = sweep::train_obfuscator(&p, *lambda, Some(&out.join("checkpoints")))?;
            let o_path = out.join("models").join("obfuscator.safetensors");
            let d_path = out.join("models").join("deobfuscator.safetensors");
            o.export(&o_path)?;
            d.export(&d_path, serde_json::json!({ "source": "co-trained", "lambda": lambda }))?;
            history.persist(&out.join("history"), &tc)?;
            run.report("history", &out.join("history").join("history.csv"))?;
            run.artifact("history_manifest", &out.join("history").join("history.json"))?;
            run.artifact("obfuscator_model", &o_path)?;
            run.artifact("deobfuscator_model", &d_path)?;
            run.manifest.model_hashes.insert("obfuscator".into(), o.hash());
            run.manifest.model_hashes.insert("deobfuscator".into(), d.hash());
            let (clean, _) = sweep::utility_metrics(&p, &|f| f.clone())?;
            let (obf, _) = sweep::utility_metrics(&p, &|f| o.obfuscate(f))?;
            let (co_mse, co_ssim) = sweep::co_trained_quality(&p, &o, &d)?;
            run.json(
                "train",
                &serde_json::json!({
                    "lambda": lambda,
                    "clean_map50": clean,
                    "obfuscated_map50": obf,
                    "co_trained_recon_mse": co_mse,
                    "co_trained_recon_ssim": co_ssim,
                    "history_hash": history.content_hash(),
                    "obfuscator_hash": o.hash(),
                    "deobfuscator_hash": d.hash(),
                    "utility_hash": p.utility.hash(),
                }),
            )?;
        }
        Command::Attack { target } => {
            let cfg = config_for(cmd, cfg)?;
            let p = run.prepared(cfg)?;
            let built = run.build(&p, target)?;
            let report = attack_evaluate(built.transform(), &p.train, &p.test, &cfg.attack)?;
            run.manifest
                .model_hashes
                .insert("attack_deobfuscator".into(), report.deobfuscator_hash.clone());
            run.json("attack", &report)?;
        }
        Command::Evaluate { target } => {
            let cfg = config_for(cmd, cfg)?;
            let p = run.prepared(cfg)?;
            let built = run.build(&p, target)?;
            let t = built.transform();
            let (metric, size) = sweep::utility_metrics(&p, &|f| t.apply(f))?;
            let (clean, clean_size) = sweep::utility_metrics(&p, &|f| f.clone())?;
            run.json(
                "evaluation",
                &serde_json::json!({
                    "target": target,
                    "task": cfg.utility.task,
                    "clean_map50": clean,
                    "map50": metric,
                    "clean_size_map50": clean_size,
                    "size_map50": size,
                    "ssim_direct": sweep::mean_direct_ssim(&p.test, t)?,
                    "clean_identity_acc": sweep::identity_accuracy(&p, &Identity)?,
                    "identity_acc": sweep::identity_accuracy(&p, t)?,
                }),
            )?;
        }
        Command::Baseline { target } => {
            let cfg = config_for(cmd, cfg)?;
            let (method, k) = match target {
                Target::Blur { k } => (Method::Blur, *k),
                Target::DetectBlur { k } => (Method::DetectBlur, *k),
                _ => return Err(BenchError::Invalid("baseline takes a blur or detect-blur target".into())),
            };
            let p = run.prepared(cfg)?;
            let built = run.build(&p, target)?;
            let point = sweep::transform_point(&p, method, k as f64, built.transform(), true)?;
            let blurred = built.transform().apply_dataset(&p.test);
            save_dataset(&blurred, &out.join("data").join(TradeoffPoint::file_stem(method, k as f64)))?;
            run.manifest
                .dataset_hashes
                .insert(format!("test_{}", TradeoffPoint::file_stem(method, k as f64)), blurred.content_hash());
            run.json("point", &point)?;
        }
        Command::Sweep { resume } => {
            let cfg = config_for(cmd, cfg)?;
            let report = sweep::run_sweep(cfg, Some(out), *resume)?;
            run.manifest.dataset_hashes = report.dataset_hashes.clone();
            run.manifest.model_hashes.insert("utility".into(), report.utility_hash.clone());
            run.artifact("model_utility", &out.join("models").join("utility.safetensors"))?;
            for pt in &report.points {
                if let Some(h) = &pt.obfuscator_hash {
                    let stem = TradeoffPoint::file_stem(pt.method, pt.knob);
                    run.manifest.model_hashes.insert(stem.clone(), h.clone());
                    run.artifact(&format!("model_{stem}"), &out.join("models").join(format!("{stem}.safetensors")))?;
                }
            }
            let outputs = write_sweep_outputs(&report, out)?;
            for (name, path) in &outputs.reports {
                run.report(name, path)?;
            }
            for (name, path) in &outputs.plots {
                run.artifact(name, path)?;
            }
        }
        Command::Plot { report } => {
            report.check()?;
            let r = SweepReport::load(&report.path)?;
            let [svg, png] = emit_curve_plot(&r.points, &out.join("curves"))?;
            run.report("curves_svg", &svg)?;
            run.artifact("curves_png", &png)?;
            if let (Some(clean), Some(obf)) = (
                r.clean.size_map50.as_ref(),
                r.reference_point().and_then(|p| p.size_map50.as_ref()),
            ) {
                let [svg, png] = emit_size_plot(clean, obf, &out.join("size"))?;
                run.report("size_svg", &svg)?;
                run.artifact("size_png", &png)?;
            }
        }
        Command::Bench { checkpoint } => {
            let cfg = config_for(cmd, cfg)?;
            let o = match checkpoint {
                Some(c) => {
                    c.check()?;
                    ObfuscatorModel::import(&c.path)?
                }
                None => ObfuscatorModel::init(&cfg.obfuscator, cfg.seeds.obfuscator)?,
            };
            run.manifest.model_hashes.insert("obfuscator".into(), o.hash());
            let reports: Vec<_> = cfg
                .throughput
                .resolutions
                .iter()
                .zip(&cfg.throughput.n_frames)
                .map(|(&[h, w], &n)| {
                    let r = bench_throughput(&o, h, w, n, cfg.throughput.memory_limit_bytes);
                    log::info!("{h}x{w}: {:?}", r.outcome);
                    r
                })
                .collect();
            // Timings vary between runs, so they are not a metric report.
            let path = out.join("throughput.json");
            write_json(&path, &reports)?;
            run.artifact("throughput", &path)?;
        }
    }
    run.manifest.wall_clock_s = start.elapsed().as_secs_f64();
    run.manifest.save(out)?;
    Ok(run.manifest)
}

/// Repeats the run recorded in `manifest_path` into `out`.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<RunManifest> {
    let m = RunManifest::load(manifest_path)?;
    if m.command.needs_config() && m.config.is_none() {
        return Err(BenchError::Invalid(format!(
            "{}: {} manifest has no config snapshot",
            manifest_path.display(),
            m.command.name()
        )));
    }
    if out.join(MANIFEST_FILE) == manifest_path {
        return Err(BenchError::Invalid("rerun needs a fresh output directory".into()));
    }
    execute(&m.command, m.config.as_ref(), out)
}

/// Writes the config snapshot next to the manifest for convenience.
pub fn write_config_snapshot(cfg: &BenchConfig, out: &Path) -> Result<PathBuf> {
    let path = out.join("config.toml");
    write_file(&path, cfg.to_toml())?;
    Ok(path)
}
