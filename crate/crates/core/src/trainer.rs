//! Alternating min-max training of O against D under a frozen U, and the
//! independent fresh-attacker evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use taskmask_nn::{exec, Adam, AdamConfig, Grads, ParamStore, Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::metrics::quality::{psnr_from_mse, ssim};
use crate::models::adversary::{recon_loss_grad, DeobfuscatorConfig, DeobfuscatorModel};
use crate::models::encdec::{Block, EncDecArch, OutputAct};
use crate::models::fit::{batch_grads, fit, BatchSampler, FitConfig};
use crate::models::image_net::ImageNet;
use crate::models::obfuscator::{ObfuscatorConfig, ObfuscatorModel};
use crate::models::utility::{TaskTargets, UtilityAdapter};
use crate::transform::FrameTransform;
use crate::types::{Dataset, Frame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the reconstruction term in `L_O = L_util - lambda * L_rec`.
    pub lambda: f64,
    pub lr_o: f64,
    pub lr_d: f64,
    pub steps: usize,
    pub d_steps_per_o_step: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Write O/D checkpoints every this many steps when a directory is given; 0 disables.
    pub checkpoint_every: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lr_o: 1e-4,
            lr_d: 1e-4,
            steps: 1000,
            d_steps_per_o_step: 1,
            batch_size: 16,
            seed: 0,
            checkpoint_every: 0,
            clip_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(CoreError::InvalidArgument(format!("train config: {what}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.lr_o > 0.0 && self.lr_d > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.d_steps_per_o_step == 0 {
            return bad("batch_size and d_steps_per_o_step must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub l_util: f64,
    pub l_rec: f64,
    pub l_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    pub wall_clock_s: f64,
    pub obfuscator_hash: String,
    pub deobfuscator_hash: String,
    pub utility_hash: String,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,l_util,l_rec,l_total\n");
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", r.step, r.l_util, r.l_rec, r.l_total));
        }
        s
    }

    /// Hash of the loss records and final parameter hashes (wall clock excluded).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_csv().as_bytes());
        h.update(self.obfuscator_hash.as_bytes());
        h.update(self.deobfuscator_hash.as_bytes());
        h.update(self.utility_hash.as_bytes());
        hex(&h.finalize())
    }

    /// Writes `history.csv` and `history.json` (config, hashes, wall clock).
    pub fn persist(&self, dir: &Path, cfg: &TrainConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let csv = dir.join("history.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| CoreError::io(&csv, e))?;
        let manifest = serde_json::json!({
            "version": 1,
            "config": cfg,
            "seed": cfg.seed,
            "obfuscator_hash": self.obfuscator_hash,
            "deobfuscator_hash": self.deobfuscator_hash,
            "utility_hash": self.utility_hash,
            "history_hash": self.content_hash(),
            "wall_clock_s": self.wall_clock_s,
        });
        let path = dir.join("history.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json"))
            .map_err(|e| CoreError::io(&path, e))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `L_O` from its parts.
pub fn obfuscator_objective(l_util: f64, l_rec: f64, lambda: f64) -> f64 {
    l_util - lambda * l_rec
}

/// One sample's contribution to the D update: reconstruction loss of
/// `D(x')` against `x` and D's parameter gradients.
pub fn deobfuscator_item<S: Scalar>(
    d_net: &ImageNet,
    d_params: &ParamStore<S>,
    xprime: Tensor<S>,
    x: &Tensor<S>,
) -> (f64, Grads<S>) {
    let pass = d_net.forward(d_params, xprime);
    let (loss, g) = recon_loss_grad(pass.output(), x);
    let mut grads = d_params.zero_grads();
    d_net.backward(d_params, &pass, &g, Some(&mut grads), false);
    (loss, grads)
}

/// Parts of the O update for one sample.
pub struct ObfuscatorItem<S> {
    pub l_util: f64,
    pub l_rec: f64,
    pub grads: Grads<S>,
}

/// One sample's contribution to the O update: `L_O = L_util(U(O(x))) -
/// lambda * L_rec(D(O(x)), x)` with U and D held fixed; gradients flow through
/// O(x) from both terms.
#[allow(clippy::too_many_arguments)]
pub fn obfuscator_item<S: Scalar>(
    o_net: &ImageNet,
    o_params: &ParamStore<S>,
    u: &UtilityAdapter,
    u_params: &ParamStore<S>,
    d_net: &ImageNet,
    d_params: &ParamStore<S>,
    x: &Tensor<S>,
    targets: &TaskTargets,
    lambda: f64,
) -> ObfuscatorItem<S> {
    let pass = o_net.forward(o_params, x.clone());
    let xprime = pass.output().clone();
    let (l_util, g_util) = u.loss_and_input_grad(u_params, xprime.clone(), targets);
    let mut g = g_util;
    let mut l_rec = 0.0;
    if lambda > 0.0 {
        let d_pass = d_net.forward(d_params, xprime);
        let (rec, g_out) = recon_loss_grad(d_pass.output(), x);
        l_rec = rec;
        let g_rec = d_net
            .backward(d_params, &d_pass, &g_out, None, true)
            .expect("input gradient requested");
        let k = S::lit(-lambda);
        for (a, b) in g.data_mut().iter_mut().zip(g_rec.data()) {
            *a += k * *b;
        }
    }
    let mut grads = o_params.zero_grads();
    o_net.backward(o_params, &pass, &g, Some(&mut grads), false);
    ObfuscatorItem { l_util, l_rec, grads }
}

fn save_pair(dir: &Path, tag: &str, o: &ObfuscatorModel, d: &DeobfuscatorModel, step: usize) -> Result<()> {
    o.export(&dir.join(format!("obfuscator_{tag}.safetensors")))?;
    d.export(
        &dir.join(format!("deobfuscator_{tag}.safetensors")),
        serde_json::json!({ "source": "adversarial_train", "step": step }),
    )
}

/// Alternating optimisation. Each outer step runs `d_steps_per_o_step`
/// updates of D on `L_rec(D(O(x)), x)` with O fixed, then one update of O on
/// `L_O` with D fixed. U is never updated; its hash is checked at the end.
///
/// When `checkpoint_dir` is given, periodic checkpoints go there, and a
/// non-finite loss writes the last good O/D pair before returning the error.
pub fn adversarial_train(
    mut o: ObfuscatorModel,
    u: &UtilityAdapter,
    mut d: DeobfuscatorModel,
    train: &Dataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ObfuscatorModel, DeobfuscatorModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CoreError::InvalidArgument("empty training set".into()));
    }
    let started = Instant::now();
    let u_hash = u.hash();
    let inputs: Vec<Tensor<f32>> = train.frames().iter().map(|f| f.to_tensor()).collect();
    let targets = train
        .iter()
        .map(|(f, a)| u.targets(a, f.height(), f.width()))
        .collect::<Result<Vec<_>>>()?;
    let adam = |lr: f64| AdamConfig {
        clip_norm: cfg.clip_norm,
        ..AdamConfig::with_lr(lr)
    };
    let mut opt_o = Adam::new(adam(cfg.lr_o), &o.params);
    let mut opt_d = Adam::new(adam(cfg.lr_d), &d.params);
    let mut sample_d = BatchSampler::new(train.len(), cfg.seed);
    let mut sample_o = BatchSampler::new(train.len(), cfg.seed ^ 0x5EED_0B5C);
    let mut records = Vec::with_capacity(cfg.steps);
    let mut last_good = (o.params.clone(), d.params.clone());

    for step in 0..cfg.steps {
        for _ in 0..cfg.d_steps_per_o_step {
            let batch = sample_d.next_batch(cfg.batch_size);
            let (o_ref, d_ref) = (&o, &d);
            let (loss, grads) = batch_grads(&d.params, &batch, &|p: &ParamStore<f32>, i: usize| {
                let xprime = o_ref.net.infer(&o_ref.params, inputs[i].clone());
                deobfuscator_item(&d_ref.net, p, xprime, &inputs[i])
            });
            if !loss.is_finite() || !grads.all_finite() {
                return abort(&mut o, &mut d, last_good, step, checkpoint_dir);
            }
            opt_d.step(&mut d.params, &grads);
        }

        let batch = sample_o.next_batch(cfg.batch_size);
        let items = exec::par_map(&batch, |&i| {
            obfuscator_item(
                &o.net,
                &o.params,
                u,
                u.params(),
                &d.net,
                &d.params,
                &inputs[i],
                &targets[i],
                cfg.lambda,
            )
        });
        let n = batch.len() as f64;
        let l_util = items.iter().map(|it| it.l_util).sum::<f64>() / n;
        let l_rec = items.iter().map(|it| it.l_rec).sum::<f64>() / n;
        let mut grads = Grads::sum_ordered(items.into_iter().map(|it| it.grads).collect()).expect("non-empty batch");
        grads.scale(1.0 / n as f32);
        if !l_util.is_finite() || !l_rec.is_finite() || !grads.all_finite() {
            return abort(&mut o, &mut d, last_good, step, checkpoint_dir);
        }
        opt_o.step(&mut o.params, &grads);
        records.push(HistoryRecord {
            step,
            l_util,
            l_rec,
            l_total: obfuscator_objective(l_util, l_rec, cfg.lambda),
        });
        last_good = (o.params.clone(), d.params.clone());
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                o.provenance = provenance(cfg, step + 1, &u_hash);
                save_pair(dir, "latest", &o, &d, step + 1)?;
            }
        }
    }

    let after = u.hash();
    if after != u_hash {
        return Err(CoreError::UtilityMutated {
            before: u_hash,
            after,
        });
    }
    o.provenance = provenance(cfg, cfg.steps, &u_hash);
    let history = TrainHistory {
        records,
        wall_clock_s: started.elapsed().as_secs_f64(),
        obfuscator_hash: o.hash(),
        deobfuscator_hash: d.hash(),
        utility_hash: u_hash,
    };
    Ok((o, d, history))
}

fn provenance(cfg: &TrainConfig, step: usize, u_hash: &str) -> serde_json::Value {
    serde_json::json!({
        "source": "adversarial_train",
        "step": step,
        "config": cfg,
        "utility_hash": u_hash,
    })
}

fn abort<T>(
    o: &mut ObfuscatorModel,
    d: &mut DeobfuscatorModel,
    last_good: (ParamStore<f32>, ParamStore<f32>),
    step: usize,
    dir: Option<&Path>,
) -> Result<T> {
    o.params = last_good.0;
    d.params = last_good.1;
    if let Some(dir) = dir {
        o.provenance = serde_json::json!({ "source": "adversarial_train", "aborted_at": step });
        save_pair(dir, "last_good", o, d, step)?;
    }
    Err(CoreError::NonFinite { step })
}

/// Where [`adversarial_train`] leaves the last good pair after an abort.
pub fn last_good_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (
        dir.join("obfuscator_last_good.safetensors"),
        dir.join("deobfuscator_last_good.safetensors"),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Base channel width of the fresh deobfuscator.
    pub width: usize,
    pub depth: usize,
    pub block: Block,
    pub fit: FitConfig,
    /// Evaluate the test reconstruction error every this many steps; 0 only at the end.
    pub curve_every: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            width: 32,
            depth: 2,
            block: Block::DepthwiseSeparable,
            fit: FitConfig {
                steps: 1000,
                lr: 1e-3,
                ..FitConfig::default()
            },
            curve_every: 0,
        }
    }
}

impl AttackConfig {
    /// Fresh attacker with the same shape the co-trained adversary gets.
    pub fn mirroring(obf: &ObfuscatorConfig, deobf: &DeobfuscatorConfig, fit: FitConfig) -> Result<Self> {
        let arch = deobf.arch(obf)?;
        Ok(Self {
            width: arch.width,
            depth: arch.depth,
            block: arch.block,
            fit,
            curve_every: 0,
        })
    }

    pub fn arch(&self) -> EncDecArch {
        EncDecArch {
            width: self.width,
            depth: self.depth,
            block: self.block,
            full_res_skip: true,
            input_skip: true,
            output: OutputAct::Clamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackCurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub test_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub final_test_recon_mse: f64,
    pub final_test_ssim: f64,
    pub final_test_psnr: f64,
    pub curves: Vec<AttackCurvePoint>,
    pub deobfuscator_hash: String,
}

impl AttackReport {
    /// True when the fresh attacker beats the co-trained adversary's error by
    /// more than 10%, i.e. the co-trained adversary was too weak.
    pub fn co_trained_too_weak(&self, co_trained_mse: f64) -> bool {
        self.final_test_recon_mse < 0.9 * co_trained_mse
    }
}

/// Mean reconstruction MSE and SSIM of `d` on `(O(x), x)` pairs.
pub fn reconstruction_quality(pairs: &[(Frame, Frame)], d: &DeobfuscatorModel) -> Result<(f64, f64)> {
    let per = exec::par_map(pairs, |(xp, x)| -> Result<(f64, f64)> {
        let xhat = d.reconstruct(xp);
        Ok((crate::metrics::quality::mse(&xhat, x)?, ssim(&xhat, x)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = per.len().max(1) as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Trains a fresh deobfuscator on `(O(x), x)` pairs from `train` and reports
/// its reconstruction error on `test`.
pub fn attack_evaluate(
    o: &dyn FrameTransform,
    train: &Dataset,
    test: &Dataset,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    if train.is_empty() || test.is_empty() {
        return Err(CoreError::InvalidArgument("attack needs non-empty train and test splits".into()));
    }
    let pairs = |ds: &Dataset| -> Vec<(Frame, Frame)> {
        exec::par_map(ds.frames(), |f| (o.apply(f), f.clone()))
    };
    let train_pairs = pairs(train);
    let test_pairs = pairs(test);
    let tensors: Vec<(Tensor<f32>, Tensor<f32>)> = train_pairs
        .iter()
        .map(|(xp, x)| (xp.to_tensor(), x.to_tensor()))
        .collect();
    let mut d = DeobfuscatorModel::init(cfg.arch(), cfg.fit.seed);
    let mut curves = Vec::new();
    let chunk = if cfg.curve_every == 0 { cfg.fit.steps.max(1) } else { cfg.curve_every };
    let mut done = 0;
    while done < cfg.fit.steps {
        let n = chunk.min(cfg.fit.steps - done);
        let seg = FitConfig {
            steps: n,
            seed: cfg.fit.seed.wrapping_add(done as u64),
            ..cfg.fit.clone()
        };
        let net = d.net.clone();
        let losses = fit(&mut d.params, &seg, tensors.len(), |p, i| {
            deobfuscator_item(&net, p, tensors[i].0.clone(), &tensors[i].1)
        })?;
        done += n;
        let test_mse = if done < cfg.fit.steps {
            Some(reconstruction_quality(&test_pairs, &d)?.0)
        } else {
            None
        };
        curves.push(AttackCurvePoint {
            step: done,
            train_loss: losses.last().copied().unwrap_or(f64::NAN),
            test_mse,
        });
    }
    let (mse, ssim) = reconstruction_quality(&test_pairs, &d)?;
    if let Some(last) = curves.last_mut() {
        last.test_mse = Some(mse);
    }
    Ok(AttackReport {
        final_test_recon_mse: mse,
        final_test_ssim: ssim,
        final_test_psnr: psnr_from_mse(mse),
        curves,
        deobfuscator_hash: d.hash(),
    })
}
