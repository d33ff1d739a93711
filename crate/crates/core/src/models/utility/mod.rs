//! Frozen task models U: a toy detector and a toy pose estimator behind one
//! adapter exposing predictions and a differentiable task loss.

pub mod detect;
pub mod nms;
pub mod pose;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use taskmask_nn::{load_checkpoint, save_checkpoint, CheckpointManifest, Graph, ParamStore, Scalar, Tensor};

pub use nms::non_max_suppression;

use super::fit::{fit, FitConfig};
use crate::error::{CoreError, Result};
use crate::geometry::uniform_sigmas;
use crate::metrics::{map50, oks_map50, Detection};
use crate::synth::{N_CLASSES, N_JOINTS};
use crate::types::{Annotation, BBox, Dataset, Frame, KeypointSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detect,
    Pose,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Detect => "detect",
            Task::Pose => "pose",
        }
    }

    fn kind(self) -> String {
        format!("utility:{}", self.name())
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub heatmap: f64,
    pub size: f64,
    pub offset: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            heatmap: 1.0,
            size: 0.1,
            offset: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub score_thresh: f64,
    pub nms_thresh: f64,
    pub top_k: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.30,
            nms_thresh: 0.50,
            top_k: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilityConfig {
    /// Base channel width of the network.
    pub width: usize,
    pub fit: FitConfig,
    pub loss_weights: LossWeights,
    pub decode: DecodeConfig,
    /// Held-out metric below which training logs a warning. Defaults to 0.85
    /// (detect) or 0.80 (pose).
    pub sanity_floor: Option<f64>,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self {
            width: 16,
            fit: FitConfig {
                steps: 1500,
                ..FitConfig::default()
            },
            loss_weights: LossWeights::default(),
            decode: DecodeConfig::default(),
            sanity_floor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Detections(Vec<Detection>),
    Keypoints(Vec<KeypointSet>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub task: Task,
    /// mAP@0.5 (detect) or OKS-mAP@0.5 (pose) on the validation split.
    pub val_metric: f64,
    pub sanity_floor: f64,
    pub below_floor: bool,
    pub first_loss: f64,
    pub final_loss: f64,
    pub param_hash: String,
}

/// Per-frame supervision in the form the loss consumes.
#[derive(Clone, Debug)]
pub enum TaskTargets {
    Detect(detect::Targets),
    Pose(pose::Targets),
}

#[derive(Clone, Debug)]
pub struct UtilityAdapter {
    pub task: Task,
    pub cfg: UtilityConfig,
    pub seed: u64,
    graph: Graph,
    params: ParamStore<f32>,
}

fn build(task: Task, width: usize, seed: u64) -> (Graph, ParamStore<f32>) {
    match task {
        Task::Detect => detect::build(N_CLASSES, width, seed),
        Task::Pose => pose::build(N_JOINTS, width, seed),
    }
}

impl UtilityAdapter {
    /// An untrained adapter; mostly useful for tests and gradient checks.
    pub fn init(task: Task, cfg: &UtilityConfig, seed: u64) -> Result<Self> {
        if cfg.width == 0 {
            return Err(CoreError::InvalidArgument("utility width must be positive".into()));
        }
        let (graph, params) = build(task, cfg.width, seed);
        Ok(Self {
            task,
            cfg: cfg.clone(),
            seed,
            graph,
            params,
        })
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// SHA-256 over parameter names, shapes and values.
    pub fn hash(&self) -> String {
        self.params.hash_hex()
    }

    pub fn expect_task(&self, task: Task) -> Result<()> {
        if self.task != task {
            return Err(CoreError::TaskMismatch {
                adapter: self.task.name(),
                requested: task.name(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &Frame) -> Prediction {
        let out = self.graph.infer(&self.params, x.to_tensor::<f32>());
        let (w, h) = (x.width(), x.height());
        match self.task {
            Task::Detect => Prediction::Detections(detect::decode(&out, N_CLASSES, h, w, &self.cfg.decode)),
            Task::Pose => Prediction::Keypoints(pose::decode(&out, N_JOINTS, h, w, &self.cfg.decode)),
        }
    }

    pub fn detections(&self, x: &Frame) -> Result<Vec<Detection>> {
        match self.predict(x) {
            Prediction::Detections(d) => Ok(d),
            Prediction::Keypoints(_) => Err(CoreError::TaskMismatch {
                adapter: self.task.name(),
                requested: Task::Detect.name(),
            }),
        }
    }

    pub fn keypoints(&self, x: &Frame) -> Result<Vec<KeypointSet>> {
        match self.predict(x) {
            Prediction::Keypoints(k) => Ok(k),
            Prediction::Detections(_) => Err(CoreError::TaskMismatch {
                adapter: self.task.name(),
                requested: Task::Pose.name(),
            }),
        }
    }

    pub fn targets(&self, gt: &Annotation, h: usize, w: usize) -> Result<TaskTargets> {
        match self.task {
            Task::Detect => {
                if let Some(b) = gt.boxes.iter().find(|b| b.cls as usize >= N_CLASSES) {
                    return Err(CoreError::record(&gt.frame_id, format!("class {} unknown to the detector", b.cls)));
                }
                Ok(TaskTargets::Detect(detect::targets(gt, N_CLASSES, h, w)))
            }
            Task::Pose => {
                if let Some(k) = gt.keypoints.iter().find(|k| k.joints.len() != N_JOINTS) {
                    return Err(CoreError::record(
                        &gt.frame_id,
                        format!("{} joints, pose model expects {N_JOINTS}", k.joints.len()),
                    ));
                }
                Ok(TaskTargets::Pose(pose::targets(gt, N_JOINTS, h, w)))
            }
        }
    }

    /// Loss on the raw network output and its gradient w.r.t. that output.
    pub fn output_loss<S: Scalar>(&self, out: &Tensor<S>, t: &TaskTargets) -> (f64, Tensor<S>) {
        match t {
            TaskTargets::Detect(t) => detect::loss(out, t, &self.cfg.loss_weights),
            TaskTargets::Pose(t) => pose::loss(out, t, &self.cfg.loss_weights),
        }
    }

    /// Task loss and its gradient w.r.t. the input image, evaluated with the
    /// given parameter copy (`f32` for training, `f64` for gradient checks).
    pub fn loss_and_input_grad<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        x: Tensor<S>,
        t: &TaskTargets,
    ) -> (f64, Tensor<S>) {
        let acts = self.graph.forward(params, x);
        let (loss, g) = self.output_loss(acts.output(), t);
        let gx = self.graph.backward(params, &acts, g, None, true).expect("input gradient requested");
        (loss, gx)
    }

    pub fn loss_value<S: Scalar>(&self, params: &ParamStore<S>, x: Tensor<S>, t: &TaskTargets) -> f64 {
        let out = self.graph.infer(params, x);
        self.output_loss(&out, t).0
    }

    pub fn task_loss(&self, x: &Frame, gt: &Annotation) -> Result<f64> {
        let t = self.targets(gt, x.height(), x.width())?;
        Ok(self.loss_value(&self.params, x.to_tensor::<f32>(), &t))
    }

    /// mAP@0.5 (detect, both classes) or OKS-mAP@0.5 (pose) over `ds`, with
    /// every frame passed through `view` first.
    pub fn evaluate_with(&self, ds: &Dataset, view: &(dyn Fn(&Frame) -> Frame + Sync)) -> Result<f64> {
        let preds = taskmask_nn::exec::par_map(ds.frames(), |f| self.predict(&view(f)));
        match self.task {
            Task::Detect => {
                let p: Vec<Vec<Detection>> = preds
                    .into_iter()
                    .map(|p| match p {
                        Prediction::Detections(d) => d,
                        Prediction::Keypoints(_) => unreachable!(),
                    })
                    .collect();
                let g: Vec<Vec<BBox>> = ds.annotations().map(|a| a.boxes.clone()).collect();
                let classes: Vec<u32> = (0..N_CLASSES as u32).collect();
                Ok(map50(&p, &g, &classes))
            }
            Task::Pose => {
                let p: Vec<Vec<KeypointSet>> = preds
                    .into_iter()
                    .map(|p| match p {
                        Prediction::Keypoints(k) => k,
                        Prediction::Detections(_) => unreachable!(),
                    })
                    .collect();
                let g: Vec<Vec<KeypointSet>> = ds.annotations().map(|a| a.keypoints.clone()).collect();
                oks_map50(&p, &g, &uniform_sigmas(N_JOINTS))
            }
        }
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<f64> {
        self.evaluate_with(ds, &|f| f.clone())
    }

    pub fn export(&self, path: &Path, provenance: serde_json::Value) -> Result<()> {
        let manifest = CheckpointManifest {
            kind: self.task.kind(),
            arch: serde_json::to_value(&self.cfg).expect("config serializes"),
            seed: self.seed,
            provenance,
        };
        save_checkpoint(path, &manifest, &self.params)?;
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let task = match ckpt.manifest.kind.as_str() {
            "utility:detect" => Task::Detect,
            "utility:pose" => Task::Pose,
            _ => {
                ckpt.expect_kind("utility:detect")?;
                unreachable!()
            }
        };
        let cfg: UtilityConfig = serde_json::from_value(ckpt.manifest.arch.clone())
            .map_err(|e| CoreError::InvalidArgument(format!("utility config in {}: {e}", path.display())))?;
        let mut u = Self::init(task, &cfg, ckpt.manifest.seed)?;
        u.params = ckpt.restore(&u.params)?;
        Ok(u)
    }
}

fn train(task: Task, train: &Dataset, val: &Dataset, cfg: &UtilityConfig) -> Result<(UtilityAdapter, UtilityReport)> {
    if train.is_empty() {
        return Err(CoreError::InvalidArgument("empty training set".into()));
    }
    let has_labels = match task {
        Task::Detect => train.annotations().any(|a| !a.boxes.is_empty()),
        Task::Pose => train.annotations().any(|a| !a.keypoints.is_empty()),
    };
    if !has_labels {
        let what = if task == Task::Detect { "boxes" } else { "keypoints" };
        return Err(CoreError::InvalidArgument(format!("training set has no {what}")));
    }
    let mut u = UtilityAdapter::init(task, cfg, cfg.fit.seed)?;
    let inputs: Vec<Tensor<f32>> = train.frames().iter().map(|f| f.to_tensor()).collect();
    let targets = train
        .iter()
        .map(|(f, a)| u.targets(a, f.height(), f.width()))
        .collect::<Result<Vec<_>>>()?;
    let mut params = std::mem::take(&mut u.params);
    let history = {
        let u = &u;
        fit(&mut params, &cfg.fit, train.len(), |p, i| {
            let acts = u.graph.forward(p, inputs[i].clone());
            let (loss, g) = u.output_loss(acts.output(), &targets[i]);
            let mut grads = p.zero_grads();
            u.graph.backward(p, &acts, g, Some(&mut grads), false);
            (loss, grads)
        })?
    };
    u.params = params;
    let val_metric = u.evaluate(val)?;
    let floor = cfg.sanity_floor.unwrap_or(match task {
        Task::Detect => 0.85,
        Task::Pose => 0.80,
    });
    let below = val_metric < floor;
    if below {
        log::warn!("{task} adapter reached {val_metric:.3} on validation, below the sanity floor {floor:.2}");
    }
    let report = UtilityReport {
        task,
        val_metric,
        sanity_floor: floor,
        below_floor: below,
        first_loss: history.first().copied().unwrap_or(f64::NAN),
        final_loss: history.last().copied().unwrap_or(f64::NAN),
        param_hash: u.hash(),
    };
    Ok((u, report))
}

/// Trains the center-heatmap detector on both classes and freezes it.
pub fn train_toy_detector(train_ds: &Dataset, val: &Dataset, cfg: &UtilityConfig) -> Result<(UtilityAdapter, UtilityReport)> {
    train(Task::Detect, train_ds, val, cfg)
}

/// Trains the five-joint heatmap pose model and freezes it.
pub fn train_toy_pose(train_ds: &Dataset, val: &Dataset, cfg: &UtilityConfig) -> Result<(UtilityAdapter, UtilityReport)> {
    train(Task::Pose, train_ds, val, cfg)
}
