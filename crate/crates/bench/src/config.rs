//! Run configuration, read from a TOML file with documented keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskmask_core::metrics::IdentityAttackConfig;
use taskmask_core::models::{DeobfuscatorConfig, ObfuscatorConfig, Task, UtilityConfig};
use taskmask_core::synth::SceneSpec;
use taskmask_core::trainer::{AttackConfig, TrainConfig};

use crate::error::{BenchError, Result};

/// The bundled demo configuration.
pub const DEMO_CFG: &str = include_str!("../demo.cfg");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub id: String,
    /// Output directory; relative paths resolve against the working directory.
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub spec: SceneSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_val: 100,
            n_test: 100,
            spec: SceneSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilitySection {
    pub task: Task,
    pub seed: u64,
    pub model: UtilityConfig,
}

impl Default for UtilitySection {
    fn default() -> Self {
        Self {
            task: Task::Detect,
            seed: 0,
            model: UtilityConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSeeds {
    pub obfuscator: u64,
    pub deobfuscator: u64,
}

impl Default for ModelSeeds {
    fn default() -> Self {
        Self {
            obfuscator: 1,
            deobfuscator: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacySection {
    /// Pixels added around each person box before resampling the crop.
    pub crop_pad: f64,
    /// Run the identity attack for every sweep point, not only the clean and
    /// reference-lambda points.
    pub identity_every_point: bool,
    pub identity: IdentityAttackConfig,
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self {
            crop_pad: 2.0,
            identity_every_point: false,
            identity: IdentityAttackConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambdas: Vec<f64>,
    pub blur_k: Vec<usize>,
    pub detect_blur_k: Vec<usize>,
    pub detect_blur_thresh: f64,
    pub detect_blur_pad: f64,
    /// Attack-SSIM window inside which an obfuscator and a blur point count
    /// as matched for the dominance check.
    pub match_tol: f64,
    /// Points evaluated concurrently.
    pub parallelism: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 1.0, 10.0],
            blur_k: taskmask_core::baselines::DEFAULT_K_GRID.to_vec(),
            detect_blur_k: Vec::new(),
            detect_blur_thresh: 0.3,
            detect_blur_pad: 0.1,
            match_tol: 0.05,
            parallelism: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThroughputSection {
    /// `[height, width]` pairs.
    pub resolutions: Vec<[usize; 2]>,
    /// Timed frames per resolution, parallel to `resolutions`.
    pub n_frames: Vec<usize>,
    /// Estimated activation memory above which a resolution is reported as
    /// out of memory instead of run.
    pub memory_limit_bytes: u64,
}

impl Default for ThroughputSection {
    fn default() -> Self {
        Self {
            resolutions: vec![[64, 64], [640, 640], [1280, 1280], [1278, 1278]],
            n_frames: vec![100, 10, 3, 3],
            memory_limit_bytes: 8 << 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub run: RunSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub utility: UtilitySection,
    #[serde(default)]
    pub obfuscator: ObfuscatorConfig,
    #[serde(default)]
    pub deobfuscator: DeobfuscatorConfig,
    #[serde(default)]
    pub seeds: ModelSeeds,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub privacy: PrivacySection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub throughput: ThroughputSection,
}

impl BenchConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|message| BenchError::Config {
            path: origin.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn demo() -> Self {
        Self::parse(DEMO_CFG, Path::new("demo.cfg")).expect("bundled demo config is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> std::result::Result<(), String> {
        self.data.spec.validate().map_err(|e| e.to_string())?;
        if self.data.n_train == 0 || self.data.n_val == 0 || self.data.n_test == 0 {
            return Err("data: n_train, n_val and n_test must be positive".into());
        }
        self.obfuscator.validate().map_err(|e| e.to_string())?;
        self.deobfuscator.arch(&self.obfuscator).map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        for &k in self.sweep.blur_k.iter().chain(&self.sweep.detect_blur_k) {
            if k == 0 || k % 2 == 0 {
                return Err(format!("sweep: blur kernel {k} must be odd and positive"));
            }
        }
        if let Some(l) = self.sweep.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(format!("sweep: lambda {l} must be finite and non-negative"));
        }
        if self.sweep.parallelism == 0 {
            return Err("sweep: parallelism must be at least 1".into());
        }
        if self.throughput.resolutions.len() != self.throughput.n_frames.len() {
            return Err("throughput: resolutions and n_frames must have the same length".into());
        }
        if self.run.id.is_empty() {
            return Err("run: id must not be empty".into());
        }
        Ok(())
    }

    /// Seeds for the train, val and test splits, derived from the scene seed.
    pub fn split_specs(&self) -> [SceneSpec; 3] {
        let base = self.data.spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        [0u64, 1, 2].map(|k| self.data.spec.clone().with_seed(base.wrapping_add(k)))
    }

    /// Lambda whose point feeds the size-stratified report.
    pub fn reference_lambda(&self) -> f64 {
        self.train.lambda
    }
}
