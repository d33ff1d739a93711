//! Central finite-difference oracle for analytic gradients.
//!
//! The `_piecewise` variants take a loss that also reports its activation
//! pattern (see [`crate::Graph::kink_pattern`]). An entry whose two probes see
//! different patterns straddles a ReLU or clamp kink, where the central
//! difference is not a derivative; such entries are skipped and counted.

use crate::{Grads, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries that are zero on
/// both sides from dominating.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

const FLOOR: f64 = 1e-6;

#[derive(Default)]
struct Tally {
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn add(&mut self, analytic: f64, up: (f64, Vec<bool>), down: (f64, Vec<bool>), eps: f64) {
        if up.1 != down.1 {
            self.skipped += 1;
            return;
        }
        let numeric = (up.0 - down.0) / (2.0 * eps);
        self.worst = self.worst.max(rel_err(analytic, numeric, FLOOR));
        self.checked += 1;
    }

    fn finish(self) -> GradCheck {
        GradCheck {
            max_rel_err: self.worst,
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

/// Checks up to `per_tensor` evenly spaced entries of every parameter tensor.
pub fn check_params_piecewise(
    params: &mut ParamStore<f64>,
    analytic: &Grads<f64>,
    eps: f64,
    per_tensor: usize,
    mut loss: impl FnMut(&ParamStore<f64>) -> (f64, Vec<bool>),
) -> GradCheck {
    let mut t = Tally::default();
    for p in 0..params.len() {
        let n = params.tensors()[p].len();
        let stride = (n / per_tensor.max(1)).max(1);
        for i in (0..n).step_by(stride).take(per_tensor) {
            let orig = *params.scalar_mut(p, i);
            *params.scalar_mut(p, i) = orig + eps;
            let up = loss(params);
            *params.scalar_mut(p, i) = orig - eps;
            let down = loss(params);
            *params.scalar_mut(p, i) = orig;
            t.add(analytic.0[p][i], up, down, eps);
        }
    }
    t.finish()
}

/// Checks up to `count` evenly spaced entries of an input tensor.
pub fn check_input_piecewise(
    x: &mut Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    count: usize,
    mut loss: impl FnMut(&Tensor<f64>) -> (f64, Vec<bool>),
) -> GradCheck {
    let n = x.len();
    let stride = (n / count.max(1)).max(1);
    let mut t = Tally::default();
    for i in (0..n).step_by(stride).take(count) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let up = loss(x);
        x.data_mut()[i] = orig - eps;
        let down = loss(x);
        x.data_mut()[i] = orig;
        t.add(analytic.data()[i], up, down, eps);
    }
    t.finish()
}

/// [`check_params_piecewise`] for a loss assumed smooth everywhere.
pub fn check_params(
    params: &mut ParamStore<f64>,
    analytic: &Grads<f64>,
    eps: f64,
    per_tensor: usize,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> GradCheck {
    check_params_piecewise(params, analytic, eps, per_tensor, |p| (loss(p), Vec::new()))
}

/// [`check_input_piecewise`] for a loss assumed smooth everywhere.
pub fn check_input(
    x: &mut Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    count: usize,
    mut loss: impl FnMut(&Tensor<f64>) -> f64,
) -> GradCheck {
    check_input_piecewise(x, analytic, eps, count, |xi| (loss(xi), Vec::new()))
}
