//! Command-line surface. Usage errors exit 2, run errors exit 1.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{execute, rerun, write_config_snapshot, Command, InputRef, Target};
use crate::config::{BenchConfig, DEMO_CFG};
use crate::error::{BenchError, Result};
use crate::manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "taskmask", version, about = "Task-preserving image obfuscation: training, attacks, baselines and sweeps")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration. `demo.cfg` falls back to the bundled demo.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `<run.out_dir>/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Identity,
    Obfuscator,
    Blur,
    DetectBlur,
}

#[derive(Args, Debug)]
struct TargetArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Lambda for the obfuscator (defaults to the configured one) or the
    /// odd kernel size for the blurs.
    #[arg(long)]
    knob: Option<f64>,
    /// Obfuscator checkpoint; without one an obfuscator is trained first.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate and save the train, val and test splits.
    Generate(Common),
    /// Train the frozen utility model.
    TrainUtility(Common),
    /// Adversarially train an obfuscator against a co-trained attacker.
    TrainObfuscator {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train a fresh reconstruction attacker against a transform.
    Attack {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Evaluate a blur baseline as one trade-off point.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        k: usize,
    },
    /// Utility, direct SSIM and identity accuracy under a transform.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Run the lambda and blur sweeps, or repeat a run from its manifest.
    Sweep {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse points already persisted in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Draw curve and size plots from a sweep report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure obfuscation throughput at the configured resolutions.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Reads a config file; a missing `demo.cfg` resolves to the bundled demo.
pub fn load_config(path: &Path) -> Result<BenchConfig> {
    if !path.exists() && path.file_name().is_some_and(|n| n == "demo.cfg") {
        log::info!("{} not found, using the bundled demo config", path.display());
        return BenchConfig::parse(DEMO_CFG, path);
    }
    BenchConfig::load(path)
}

fn target(t: &TargetArgs, cfg: &BenchConfig) -> Result<Target> {
    let kernel = || -> Result<usize> {
        let k = t
            .knob
            .ok_or_else(|| BenchError::Invalid("blur methods need --knob <kernel size>".into()))?;
        if k.fract() != 0.0 || k < 1.0 {
            return Err(BenchError::Invalid(format!("kernel size {k} is not a positive integer")));
        }
        Ok(k as usize)
    };
    Ok(match t.method {
        MethodArg::Identity => Target::Identity,
        MethodArg::Obfuscator => Target::Obfuscator {
            lambda: t.knob.unwrap_or(cfg.train.lambda),
            checkpoint: t.checkpoint.as_deref().map(InputRef::pin).transpose()?,
        },
        MethodArg::Blur => Target::Blur { k: kernel()? },
        MethodArg::DetectBlur => Target::DetectBlur { k: kernel()? },
    })
}

fn out_dir(cfg: &BenchConfig, out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| cfg.run.out_dir.join(name))
}

fn dispatch(cmd: Cmd) -> Result<(RunManifest, PathBuf)> {
    let with = |common: &Common, name: &str, f: &dyn Fn(&BenchConfig) -> Result<Command>| -> Result<(RunManifest, PathBuf)> {
        let cfg = load_config(&common.config)?;
        let out = out_dir(&cfg, common.out.clone(), name);
        let command = f(&cfg)?;
        write_config_snapshot(&cfg, &out)?;
        Ok((execute(&command, Some(&cfg), &out)?, out))
    };
    match cmd {
        Cmd::Generate(c) => with(&c, "generate", &|_| Ok(Command::Generate)),
        Cmd::TrainUtility(c) => with(&c, "train-utility", &|_| Ok(Command::TrainUtility)),
        Cmd::TrainObfuscator { common, lambda } => with(&common, "train-obfuscator", &|cfg| {
            Ok(Command::TrainObfuscator {
                lambda: lambda.unwrap_or(cfg.train.lambda),
            })
        }),
        Cmd::Attack { common, target: t } => with(&common, "attack", &|cfg| Ok(Command::Attack { target: target(&t, cfg)? })),
        Cmd::Evaluate { common, target: t } => {
            with(&common, "evaluate", &|cfg| Ok(Command::Evaluate { target: target(&t, cfg)? }))
        }
        Cmd::Baseline { common, method, k } => with(&common, "baseline", &|_| {
            let target = match method {
                MethodArg::Blur => Target::Blur { k },
                MethodArg::DetectBlur => Target::DetectBlur { k },
                other => return Err(BenchError::Invalid(format!("baseline method must be blur or detect-blur, got {other:?}"))),
            };
            Ok(Command::Baseline { target })
        }),
        Cmd::Sweep {
            config,
            manifest,
            out,
            resume,
        } => match (config, manifest) {
            (Some(path), _) => {
                let cfg = load_config(&path)?;
                let out = out.unwrap_or_else(|| cfg.run.out_dir.clone());
                write_config_snapshot(&cfg, &out)?;
                Ok((execute(&Command::Sweep { resume }, Some(&cfg), &out)?, out))
            }
            (None, Some(m)) => {
                let out = out.unwrap_or_else(|| m.parent().unwrap_or(Path::new(".")).join("rerun"));
                let original = RunManifest::load(&m)?;
                let again = rerun(&m, &out)?;
                let bad = original.report_mismatches(&again);
                for b in &bad {
                    log::error!("report {} differs: {:?} vs {:?}", b.name, b.expected, b.found);
                }
                if !bad.is_empty() {
                    return Err(BenchError::Invalid(format!("{} report(s) differ from the manifest", bad.len())));
                }
                log::info!("all {} reports reproduced", again.reports.len());
                Ok((again, out))
            }
            (None, None) => unreachable!("clap requires one of --config and --manifest"),
        },
        Cmd::Plot { report, out } => {
            let out = out.unwrap_or_else(|| report.parent().unwrap_or(Path::new(".")).to_path_buf());
            let command = Command::Plot {
                report: InputRef::pin(&report)?,
            };
            Ok((execute(&command, None, &out)?, out))
        }
        Cmd::Bench { common, checkpoint } => with(&common, "bench", &|_| {
            Ok(Command::Bench {
                checkpoint: checkpoint.as_deref().map(InputRef::pin).transpose()?,
            })
        }),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_secs().try_init();
    match dispatch(cli.cmd) {
        Ok((m, out)) => {
            log::info!("{} finished in {:.1}s; manifest in {}", m.command.name(), m.wall_clock_s, out.display());
            0
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}
