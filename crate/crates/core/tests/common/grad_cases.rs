//! Gradient-check cases on tiny f64 configs, shared by the gradient tests
//! and the acceptance report.
//!
//! Entries whose two probes straddle a ReLU or clamp kink are skipped by the
//! piecewise checker; [`acceptable`] bounds how many that may be.

use taskmask_core::models::encdec::Block;
use taskmask_core::models::image_net::ImageNet;
use taskmask_core::models::utility::TaskTargets;
use taskmask_core::models::*;
use taskmask_core::trainer::{deobfuscator_item, obfuscator_item};
use taskmask_core::{Annotation, BBox};
use taskmask_nn::gradcheck::{check_input_piecewise, check_params_piecewise, GradCheck};
use taskmask_nn::{ParamStore, Tensor};

// The utility loss is O(1) while single-weight gradients reach 1e-6, so a
// smaller step drowns in f64 rounding.
pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const SIDE: usize = 16;

/// Relative error under `TOL` with at most one entry in ten skipped.
pub fn acceptable(r: &GradCheck) -> bool {
    r.max_rel_err < TOL && r.checked > 0 && r.skipped * 10 <= r.checked + r.skipped
}

fn image(seed: u64) -> Tensor<f64> {
    let n = 3 * SIDE * SIDE;
    let data = (0..n)
        .map(|i| 0.5 + 0.4 * ((i as f64 * 0.61 + seed as f64 * 1.7).sin() * (i as f64 * 0.13).cos()))
        .collect();
    Tensor::from_vec(&[3, SIDE, SIDE], data)
}

/// Zero-initialised biases leave dead units exactly on the kink; a nearby
/// generic point is checked instead.
fn generic(p: &ParamStore<f32>) -> ParamStore<f64> {
    let mut q: ParamStore<f64> = p.cast();
    for k in 0..q.len() {
        for i in 0..q.tensors()[k].len() {
            *q.scalar_mut(k, i) += 0.05 * ((k * 131 + i * 7) as f64).sin();
        }
    }
    q
}

fn tiny_obfuscator(block: Block) -> ObfuscatorModel {
    let cfg = ObfuscatorConfig {
        base_width: 4,
        depth: 1,
        block,
    };
    ObfuscatorModel::init(&cfg, 11).unwrap()
}

fn tiny_deobfuscator(o: &ObfuscatorModel) -> DeobfuscatorModel {
    DeobfuscatorModel::init(DeobfuscatorConfig::default().arch(&o.cfg).unwrap(), 12)
}

fn tiny_detector() -> (UtilityAdapter, TaskTargets) {
    let cfg = UtilityConfig {
        width: 4,
        ..UtilityConfig::default()
    };
    let u = UtilityAdapter::init(Task::Detect, &cfg, 13).unwrap();
    let gt = Annotation {
        frame_id: "g".into(),
        boxes: vec![
            BBox::new(2.3, 3.1, 10.7, 9.4, 0).unwrap(),
            BBox::new(9.0, 8.5, 14.2, 15.6, 1).unwrap(),
        ],
        keypoints: Vec::new(),
        identity: None,
    };
    let t = u.targets(&gt, SIDE, SIDE).unwrap();
    (u, t)
}

/// `mean((O(x) - t)^2)`, its output gradient and the activation pattern.
fn probe(net: &ImageNet, p: &ParamStore<f64>, x: &Tensor<f64>, t: &Tensor<f64>) -> (f64, Tensor<f64>, Vec<bool>) {
    let pass = net.forward(p, x.clone());
    let n = x.len() as f64;
    let d: Vec<f64> = pass.output().data().iter().zip(t.data()).map(|(a, b)| a - b).collect();
    let loss = d.iter().map(|v| v * v).sum::<f64>() / n;
    let g = Tensor::from_vec(x.shape(), d.iter().map(|v| 2.0 * v / n).collect());
    (loss, g, net.kink_pattern(&pass))
}

fn probe_value(net: &ImageNet, p: &ParamStore<f64>, x: &Tensor<f64>, t: &Tensor<f64>) -> (f64, Vec<bool>) {
    let (l, _, k) = probe(net, p, x, t);
    (l, k)
}

pub fn obfuscator_probe_loss() -> Vec<(String, GradCheck)> {
    [Block::DepthwiseSeparable, Block::Dense]
        .into_iter()
        .map(|block| {
            let o = tiny_obfuscator(block);
            let mut p = generic(&o.params);
            let (x, t) = (image(1), image(2));
            let (_, g, _) = probe(&o.net, &p, &x, &t);
            let pass = o.net.forward(&p, x.clone());
            let mut grads = p.zero_grads();
            o.net.backward(&p, &pass, &g, Some(&mut grads), false);
            let r = check_params_piecewise(&mut p, &grads, EPS, 6, |q| probe_value(&o.net, q, &x, &t));
            (format!("probe loss, {block:?} blocks"), r)
        })
        .collect()
}

pub fn probe_loss_at_unaligned_size() -> Vec<(String, GradCheck)> {
    let o = tiny_obfuscator(Block::DepthwiseSeparable);
    let mut p = generic(&o.params);
    let x = Tensor::from_vec(&[3, 13, 15], image(3).data()[..3 * 13 * 15].to_vec());
    let t = x.map(|v| 1.0 - v);
    let (_, g, _) = probe(&o.net, &p, &x, &t);
    let pass = o.net.forward(&p, x.clone());
    let mut grads = p.zero_grads();
    let gx = o.net.backward(&p, &pass, &g, Some(&mut grads), true).unwrap();
    let rp = check_params_piecewise(&mut p, &grads, EPS, 6, |q| probe_value(&o.net, q, &x, &t));
    let mut xin = x.clone();
    let rx = check_input_piecewise(&mut xin, &gx, EPS, 40, |xi| probe_value(&o.net, &p, xi, &t));
    vec![("13x15 probe, params".into(), rp), ("13x15 probe, input".into(), rx)]
}

pub fn composite_obfuscator_objective() -> Vec<(String, GradCheck)> {
    let o = tiny_obfuscator(Block::DepthwiseSeparable);
    let d = tiny_deobfuscator(&o);
    let (u, t) = tiny_detector();
    let mut op = generic(&o.params);
    let up = generic(u.params());
    let dp = generic(&d.params);
    let x = image(4);
    let pattern = |q: &ParamStore<f64>| {
        let pass = o.net.forward(q, x.clone());
        let xp = pass.output().clone();
        let mut k = o.net.kink_pattern(&pass);
        k.extend(u.graph().kink_pattern(&u.graph().forward(&up, xp.clone())));
        k.extend(d.net.kink_pattern(&d.net.forward(&dp, xp)));
        k
    };
    [0.0, 0.7, 3.0]
        .into_iter()
        .map(|lambda| {
            let item = obfuscator_item(&o.net, &op, &u, &up, &d.net, &dp, &x, &t, lambda);
            let r = check_params_piecewise(&mut op, &item.grads, EPS, 5, |q| {
                let it = obfuscator_item(&o.net, q, &u, &up, &d.net, &dp, &x, &t, lambda);
                (it.l_util - lambda * it.l_rec, pattern(q))
            });
            (format!("composite objective, lambda {lambda}"), r)
        })
        .collect()
}

pub fn deobfuscator_reconstruction_loss() -> Vec<(String, GradCheck)> {
    let o = tiny_obfuscator(Block::DepthwiseSeparable);
    let d = tiny_deobfuscator(&o);
    let mut dp = generic(&d.params);
    let x = image(5);
    let xprime = o.net.infer(&generic(&o.params), x.clone());
    let (_, grads) = deobfuscator_item(&d.net, &dp, xprime.clone(), &x);
    let r = check_params_piecewise(&mut dp, &grads, EPS, 5, |q| {
        let k = d.net.kink_pattern(&d.net.forward(q, xprime.clone()));
        (deobfuscator_item(&d.net, q, xprime.clone(), &x).0, k)
    });
    vec![("deobfuscator reconstruction loss".into(), r)]
}

pub fn utility_input_gradient() -> Vec<(String, GradCheck)> {
    let (u, t) = tiny_detector();
    let up = generic(u.params());
    let mut x = image(6);
    let (_, gx) = u.loss_and_input_grad(&up, x.clone(), &t);
    let r = check_input_piecewise(&mut x, &gx, EPS, 60, |xi| {
        let k = u.graph().kink_pattern(&u.graph().forward(&up, xi.clone()));
        (u.loss_and_input_grad(&up, xi.clone(), &t).0, k)
    });
    vec![("utility input gradient".into(), r)]
}
