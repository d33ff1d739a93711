//! Run manifests: everything needed to repeat a run and check its outputs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Command;
use crate::config::BenchConfig;
use crate::error::{read_json, write_json, BenchError, Result};

pub const MANIFEST_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// A file written by the run, relative to the run's output directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u64,
    pub run_id: String,
    pub package_version: String,
    pub command: Command,
    /// Full configuration snapshot; absent for commands that need none.
    pub config: Option<BenchConfig>,
    pub seeds: BTreeMap<String, u64>,
    pub dataset_hashes: BTreeMap<String, String>,
    pub model_hashes: BTreeMap<String, String>,
    /// Deterministic metric reports; a rerun must reproduce these hashes.
    pub reports: BTreeMap<String, ArtifactRef>,
    /// Timing reports, figures and checkpoints.
    pub artifacts: BTreeMap<String, ArtifactRef>,
    pub wall_clock_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| BenchError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn artifact(out: &Path, path: &Path) -> Result<ArtifactRef> {
    Ok(ArtifactRef {
        path: path.strip_prefix(out).unwrap_or(path).to_path_buf(),
        sha256: sha256_file(path)?,
    })
}

pub fn config_seeds(cfg: &BenchConfig) -> BTreeMap<String, u64> {
    let [train, val, test] = cfg.split_specs();
    BTreeMap::from([
        ("scene".to_string(), cfg.data.spec.seed),
        ("scene_train".to_string(), train.seed),
        ("scene_val".to_string(), val.seed),
        ("scene_test".to_string(), test.seed),
        ("utility".to_string(), cfg.utility.seed),
        ("obfuscator_init".to_string(), cfg.seeds.obfuscator),
        ("deobfuscator_init".to_string(), cfg.seeds.deobfuscator),
        ("train".to_string(), cfg.train.seed),
        ("attack".to_string(), cfg.attack.fit.seed),
        ("identity_attack".to_string(), cfg.privacy.identity.fit.seed),
    ])
}

/// A report whose hash differs between two manifests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub name: String,
    pub expected: Option<String>,
    pub found: Option<String>,
}

impl RunManifest {
    pub fn new(command: Command, config: Option<BenchConfig>, run_id: String) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            run_id,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: config.as_ref().map(config_seeds).unwrap_or_default(),
            command,
            config,
            dataset_hashes: BTreeMap::new(),
            model_hashes: BTreeMap::new(),
            reports: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let v: serde_json::Value = read_json(path)?;
        let found = v.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != MANIFEST_VERSION {
            return Err(BenchError::Version {
                what: "run manifest",
                found,
                expected: MANIFEST_VERSION,
            });
        }
        serde_json::from_value(v).map_err(|source| BenchError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }

    /// Reports whose hashes differ from `self` in `other`, including reports
    /// missing on either side.
    pub fn report_mismatches(&self, other: &RunManifest) -> Vec<Mismatch> {
        let names: std::collections::BTreeSet<&String> = self.reports.keys().chain(other.reports.keys()).collect();
        names
            .into_iter()
            .filter_map(|n| {
                let a = self.reports.get(n).map(|r| r.sha256.clone());
                let b = other.reports.get(n).map(|r| r.sha256.clone());
                (a != b).then(|| Mismatch {
                    name: n.clone(),
                    expected: a,
                    found: b,
                })
            })
            .collect()
    }

    /// Re-hashes every recorded file under `out`.
    pub fn verify_files(&self, out: &Path) -> Result<Vec<Mismatch>> {
        let mut bad = Vec::new();
        for (name, r) in self.reports.iter().chain(&self.artifacts) {
            let path = out.join(&r.path);
            let found = if path.exists() { Some(sha256_file(&path)?) } else { None };
            if found.as_deref() != Some(r.sha256.as_str()) {
                bad.push(Mismatch {
                    name: name.clone(),
                    expected: Some(r.sha256.clone()),
                    found,
                });
            }
        }
        Ok(bad)
    }
}
