//! The learned full-frame obfuscator O.

use std::path::Path;

use serde::{Deserialize, Serialize};
use taskmask_nn::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamStore};

use super::encdec::{Block, EncDecArch, OutputAct};
use super::image_net::ImageNet;
use crate::error::{CoreError, Result};
use crate::transform::FrameTransform;
use crate::types::Frame;

pub const PARAM_BUDGET: usize = 2_000_000;
pub const OBFUSCATOR_KIND: &str = "obfuscator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObfuscatorConfig {
    /// Channel width of the full-resolution stage; stage `i` has `base_width << i`.
    pub base_width: usize,
    /// Number of stride-2 stages.
    pub depth: usize,
    pub block: Block,
}

impl Default for ObfuscatorConfig {
    fn default() -> Self {
        Self {
            base_width: 16,
            depth: 2,
            block: Block::DepthwiseSeparable,
        }
    }
}

impl ObfuscatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(CoreError::InvalidArgument("obfuscator depth must be at least 1".into()));
        }
        if self.depth > 6 {
            return Err(CoreError::InvalidArgument(format!("obfuscator depth {} exceeds 6", self.depth)));
        }
        if self.base_width == 0 {
            return Err(CoreError::InvalidArgument("obfuscator base_width must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn arch(&self) -> EncDecArch {
        EncDecArch {
            width: self.base_width,
            depth: self.depth,
            block: self.block,
            full_res_skip: false,
            input_skip: false,
            output: OutputAct::Sigmoid,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObfuscatorModel {
    pub cfg: ObfuscatorConfig,
    pub seed: u64,
    pub net: ImageNet,
    pub params: ParamStore<f32>,
    /// How the weights were produced; written into exported checkpoints.
    pub provenance: serde_json::Value,
}

impl ObfuscatorModel {
    pub fn init(cfg: &ObfuscatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (net, params) = cfg.arch().build::<f32>(seed);
        let count = params.count();
        if count >= PARAM_BUDGET {
            return Err(CoreError::ParamBudget {
                count,
                limit: PARAM_BUDGET,
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            net,
            params,
            provenance: serde_json::json!({ "source": "init" }),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn obfuscate(&self, x: &Frame) -> Frame {
        let y = self.net.infer(&self.params, x.to_tensor::<f32>());
        Frame::from_tensor(x.id(), &y).expect("obfuscator output is a 3-channel frame")
    }

    /// Estimated peak working memory of one `obfuscate` call.
    pub fn infer_peak_bytes(&self, h: usize, w: usize) -> u64 {
        (self.net.infer_peak_elems(h, w) * std::mem::size_of::<f32>()) as u64
    }

    pub fn hash(&self) -> String {
        self.params.hash_hex()
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let manifest = CheckpointManifest {
            kind: OBFUSCATOR_KIND.into(),
            arch: serde_json::to_value(&self.cfg).expect("config serializes"),
            seed: self.seed,
            provenance: self.provenance.clone(),
        };
        save_checkpoint(path, &manifest, &self.params)?;
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        ckpt.expect_kind(OBFUSCATOR_KIND)?;
        let cfg: ObfuscatorConfig = serde_json::from_value(ckpt.manifest.arch.clone())
            .map_err(|e| CoreError::InvalidArgument(format!("obfuscator arch in {}: {e}", path.display())))?;
        let mut model = Self::init(&cfg, ckpt.manifest.seed)?;
        model.provenance = ckpt.manifest.provenance.clone();
        model.params = ckpt.restore(&model.params)?;
        Ok(model)
    }
}

impl FrameTransform for ObfuscatorModel {
    fn apply(&self, x: &Frame) -> Frame {
        self.obfuscate(x)
    }
}
