//! Re-identification attack: a small classifier trained on person crops.

use serde::{Deserialize, Serialize};
use taskmask_nn::{exec, Graph, GraphBuilder, ParamStore, Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::models::fit::{fit, FitConfig};
use crate::types::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentityAttackConfig {
    pub width: usize,
    pub fit: FitConfig,
}

impl Default for IdentityAttackConfig {
    fn default() -> Self {
        Self {
            width: 16,
            fit: FitConfig {
                steps: 600,
                batch_size: 32,
                lr: 2e-3,
                ..FitConfig::default()
            },
        }
    }
}

fn classifier(n_classes: usize, width: usize, seed: u64) -> (Graph, ParamStore<f32>) {
    let mut params = ParamStore::new();
    let mut b = GraphBuilder::new(&mut params, 3, seed);
    let w = width;
    let x = b.input();
    let c = b.conv("c1", x, w, 3, 1);
    let c = b.relu(c);
    let c = b.conv("c2", c, 2 * w, 3, 2);
    let c = b.relu(c);
    let c = b.conv("c3", c, 2 * w, 3, 1);
    let c = b.relu(c);
    let c = b.conv("c4", c, 4 * w, 3, 2);
    let c = b.relu(c);
    let c = b.conv("c5", c, 4 * w, 3, 1);
    let c = b.relu(c);
    let p = b.global_avg_pool(c);
    let logits = b.conv("fc", p, n_classes, 1, 1);
    (b.finish(logits), params)
}

/// Softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, label: usize) -> (f64, Tensor<S>) {
    let z: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let loss = -(z[label] - m - s.ln());
    let grad = e
        .iter()
        .enumerate()
        .map(|(i, v)| S::lit(v / s - f64::from(i == label)))
        .collect();
    (loss, Tensor::from_vec(logits.shape(), grad))
}

fn argmax(t: &Tensor<f32>) -> usize {
    t.data()
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Trains on `train` crops and returns held-out accuracy on `test`.
/// Chance level is `1 / n_identities`.
pub fn identity_attack(
    train: &[(Frame, u32)],
    test: &[(Frame, u32)],
    n_identities: u32,
    cfg: &IdentityAttackConfig,
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(CoreError::InvalidArgument("identity attack needs train and test crops".into()));
    }
    if let Some((_, id)) = train.iter().chain(test).find(|(_, id)| *id >= n_identities) {
        return Err(CoreError::InvalidArgument(format!("identity {id} >= n_identities {n_identities}")));
    }
    let (graph, mut params) = classifier(n_identities as usize, cfg.width, cfg.fit.seed);
    let inputs: Vec<Tensor<f32>> = train.iter().map(|(f, _)| f.to_tensor()).collect();
    fit(&mut params, &cfg.fit, train.len(), |p, i| {
        let acts = graph.forward(p, inputs[i].clone());
        let (loss, g) = cross_entropy(acts.output(), train[i].1 as usize);
        let mut grads = p.zero_grads();
        graph.backward(p, &acts, g, Some(&mut grads), false);
        (loss, grads)
    })?;
    let hits = exec::par_map(test, |(f, id)| argmax(&graph.infer(&params, f.to_tensor())) == *id as usize);
    Ok(hits.iter().filter(|&&h| h).count() as f64 / test.len() as f64)
}
