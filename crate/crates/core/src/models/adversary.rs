//! The deobfuscator D, which tries to recover `x` from `O(x)`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use taskmask_nn::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamStore, Scalar, Tensor};

use super::encdec::{Block, EncDecArch, OutputAct};
use super::image_net::ImageNet;
use super::obfuscator::ObfuscatorConfig;
use crate::error::{CoreError, Result};
use crate::metrics::quality;
use crate::types::Frame;

pub const DEOBFUSCATOR_KIND: &str = "deobfuscator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeobfuscatorConfig {
    /// Channel width relative to the obfuscator's `base_width`.
    pub width_ratio: f64,
    /// Stride-2 stages; the obfuscator's depth when absent.
    pub depth: Option<usize>,
    pub block: Block,
}

impl Default for DeobfuscatorConfig {
    fn default() -> Self {
        Self {
            width_ratio: 2.0,
            depth: None,
            block: Block::DepthwiseSeparable,
        }
    }
}

impl DeobfuscatorConfig {
    pub fn arch(&self, obf: &ObfuscatorConfig) -> Result<EncDecArch> {
        if !(self.width_ratio > 0.0 && self.width_ratio.is_finite()) {
            return Err(CoreError::InvalidArgument("width_ratio must be positive".into()));
        }
        let depth = self.depth.unwrap_or(obf.depth);
        if depth == 0 {
            return Err(CoreError::InvalidArgument("deobfuscator depth must be at least 1".into()));
        }
        Ok(EncDecArch {
            width: ((obf.base_width as f64 * self.width_ratio).round() as usize).max(1),
            depth,
            block: self.block,
            full_res_skip: true,
            input_skip: true,
            output: OutputAct::Clamp,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DeobfuscatorModel {
    pub arch: EncDecArch,
    pub seed: u64,
    pub net: ImageNet,
    pub params: ParamStore<f32>,
}

impl DeobfuscatorModel {
    pub fn init(arch: EncDecArch, seed: u64) -> Self {
        let (net, params) = arch.build::<f32>(seed);
        Self {
            arch,
            seed,
            net,
            params,
        }
    }

    pub fn reconstruct(&self, xprime: &Frame) -> Frame {
        let y = self.net.infer(&self.params, xprime.to_tensor::<f32>());
        Frame::from_tensor(xprime.id(), &y).expect("deobfuscator output is a 3-channel frame")
    }

    pub fn hash(&self) -> String {
        self.params.hash_hex()
    }

    pub fn export(&self, path: &Path, provenance: serde_json::Value) -> Result<()> {
        let manifest = CheckpointManifest {
            kind: DEOBFUSCATOR_KIND.into(),
            arch: serde_json::to_value(&self.arch).expect("arch serializes"),
            seed: self.seed,
            provenance,
        };
        save_checkpoint(path, &manifest, &self.params)?;
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        ckpt.expect_kind(DEOBFUSCATOR_KIND)?;
        let arch: EncDecArch = serde_json::from_value(ckpt.manifest.arch.clone())
            .map_err(|e| CoreError::InvalidArgument(format!("deobfuscator arch in {}: {e}", path.display())))?;
        let mut model = Self::init(arch, ckpt.manifest.seed);
        model.params = ckpt.restore(&model.params)?;
        Ok(model)
    }
}

/// Mean squared error between a reconstruction and the original frame.
pub fn recon_loss(xhat: &Frame, x: &Frame) -> Result<f64> {
    quality::mse(xhat, x)
}

/// Tensor form of [`recon_loss`] with its gradient w.r.t. `xhat`.
pub fn recon_loss_grad<S: Scalar>(xhat: &Tensor<S>, x: &Tensor<S>) -> (f64, Tensor<S>) {
    assert_eq!(xhat.shape(), x.shape(), "recon_loss shape mismatch");
    let n = x.len() as f64;
    let mut loss = 0.0;
    let grad = xhat
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| {
            let d = (a - b).as_f64();
            loss += d * d;
            S::lit(2.0 * d / n)
        })
        .collect();
    (loss / n, Tensor::from_vec(xhat.shape(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(v: f32) -> Frame {
        Frame::filled("f", 16, 16, [v; 3]).unwrap()
    }

    #[test]
    fn recon_loss_fixtures() {
        assert_eq!(recon_loss(&filled(0.3), &filled(0.3)).unwrap(), 0.0);
        assert_eq!(recon_loss(&filled(1.0), &filled(0.0)).unwrap(), 1.0);
        assert_eq!(recon_loss(&filled(0.5), &filled(0.0)).unwrap(), 0.25);
        assert!(recon_loss(&filled(0.5), &Frame::filled("g", 16, 17, [0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn tensor_loss_matches_frame_loss() {
        let a = filled(0.25);
        let b = filled(0.75);
        let (l, g) = recon_loss_grad(&a.to_tensor::<f64>(), &b.to_tensor::<f64>());
        assert!((l - recon_loss(&a, &b).unwrap()).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| (v - 2.0 * -0.5 / (3.0 * 256.0)).abs() < 1e-15));
    }

    #[test]
    fn default_width_is_twice_the_obfuscator() {
        let arch = DeobfuscatorConfig::default().arch(&ObfuscatorConfig::default()).unwrap();
        assert_eq!(arch.width, 32);
        assert_eq!(arch.depth, 2);
    }

    #[test]
    fn reconstruct_preserves_shape_and_range() {
        let arch = DeobfuscatorConfig::default().arch(&ObfuscatorConfig::default()).unwrap();
        let d = DeobfuscatorModel::init(arch, 2);
        let px: Vec<f32> = (0..40 * 24 * 3).map(|i| (i % 17) as f32 / 16.0).collect();
        let x = Frame::new("x", 40, 24, px).unwrap();
        let y = d.reconstruct(&x);
        assert_eq!((y.width(), y.height()), (40, 24));
        assert!(y.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(y.pixels(), d.reconstruct(&x).pixels());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.safetensors");
        let arch = DeobfuscatorConfig::default().arch(&ObfuscatorConfig::default()).unwrap();
        let d = DeobfuscatorModel::init(arch, 5);
        d.export(&path, serde_json::Value::Null).unwrap();
        assert_eq!(DeobfuscatorModel::import(&path).unwrap().hash(), d.hash());
    }
}
