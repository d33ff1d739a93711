//! Static computation graphs over `[c, h, w]` activations.
//!
//! A graph is a list of nodes in topological order. Slot 0 holds the input and
//! node `i` writes slot `i + 1`. The forward pass keeps every slot so the
//! backward pass can walk the nodes in reverse without a tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{self, ConvGeom};
use crate::{Grads, ParamId, ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot(pub usize);

#[derive(Clone, Debug)]
pub enum Op {
    Conv {
        weight: ParamId,
        bias: ParamId,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    },
    Depthwise {
        weight: ParamId,
        bias: ParamId,
        channels: usize,
        geom: ConvGeom,
    },
    Relu,
    Sigmoid,
    /// Hard clamp to `[0, 1]`.
    Clamp01,
    /// Nearest-neighbour 2x upsampling.
    Upsample2,
    /// Channel concatenation of two inputs.
    Concat,
    GlobalAvgPool,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    channels: Vec<usize>,
    output: usize,
    last_use: Vec<usize>,
}

/// All slot values of one forward pass.
#[derive(Clone, Debug)]
pub struct Activations<S> {
    slots: Vec<Tensor<S>>,
    output: usize,
}

impl<S: Scalar> Activations<S> {
    pub fn output(&self) -> &Tensor<S> {
        &self.slots[self.output]
    }

    pub fn slot(&self, s: Slot) -> &Tensor<S> {
        &self.slots[s.0]
    }

    pub fn into_output(mut self) -> Tensor<S> {
        self.slots.swap_remove(self.output)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±gain * sqrt(6 / fan_in)`.
    HeUniform { gain: f64 },
    Zeros,
}

pub struct GraphBuilder<'p, S> {
    params: &'p mut ParamStore<S>,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    channels: Vec<usize>,
}

impl<'p, S: Scalar> GraphBuilder<'p, S> {
    pub fn new(params: &'p mut ParamStore<S>, input_channels: usize, seed: u64) -> Self {
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            channels: vec![input_channels],
        }
    }

    pub fn input(&self) -> Slot {
        Slot(0)
    }

    pub fn channels(&self, s: Slot) -> usize {
        self.channels[s.0]
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, out_channels: usize) -> Slot {
        self.nodes.push(Node { op, inputs });
        self.channels.push(out_channels);
        Slot(self.channels.len() - 1)
    }

    fn init_tensor(&mut self, shape: &[usize], fan_in: usize, init: Init) -> Tensor<S> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![S::zero(); n],
            Init::HeUniform { gain } => {
                let bound = gain * (6.0 / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| S::lit(self.rng.random_range(-bound..bound)))
                    .collect()
            }
        };
        Tensor::from_vec(shape, data)
    }

    /// Dense `kernel`×`kernel` convolution with "same" padding.
    pub fn conv(&mut self, name: &str, x: Slot, cout: usize, kernel: usize, stride: usize) -> Slot {
        self.conv_init(name, x, cout, kernel, stride, Init::HeUniform { gain: 1.0 })
    }

    pub fn conv_init(
        &mut self,
        name: &str,
        x: Slot,
        cout: usize,
        kernel: usize,
        stride: usize,
        init: Init,
    ) -> Slot {
        let cin = self.channels[x.0];
        let fan_in = cin * kernel * kernel;
        let w = self.init_tensor(&[cout, fan_in], fan_in, init);
        let weight = self.params.add(format!("{name}.weight"), w);
        let bias = self.params.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        let geom = ConvGeom {
            kernel,
            stride,
            pad: kernel / 2,
        };
        self.push(
            Op::Conv {
                weight,
                bias,
                cin,
                cout,
                geom,
            },
            vec![x.0],
            cout,
        )
    }

    pub fn depthwise(&mut self, name: &str, x: Slot, kernel: usize, stride: usize) -> Slot {
        let c = self.channels[x.0];
        let fan_in = kernel * kernel;
        let w = self.init_tensor(&[c, fan_in], fan_in, Init::HeUniform { gain: 1.0 });
        let weight = self.params.add(format!("{name}.weight"), w);
        let bias = self.params.add(format!("{name}.bias"), Tensor::zeros(&[c]));
        let geom = ConvGeom {
            kernel,
            stride,
            pad: kernel / 2,
        };
        self.push(
            Op::Depthwise {
                weight,
                bias,
                channels: c,
                geom,
            },
            vec![x.0],
            c,
        )
    }

    /// Fills the bias of the parameter named `{name}.bias` with `value`.
    pub fn set_bias(&mut self, name: &str, value: f64) {
        let key = format!("{name}.bias");
        let idx = self
            .params
            .names()
            .iter()
            .position(|n| *n == key)
            .unwrap_or_else(|| panic!("no parameter {key}"));
        for v in self.params.get_mut(ParamId(idx)).data_mut() {
            *v = S::lit(value);
        }
    }

    pub fn relu(&mut self, x: Slot) -> Slot {
        let c = self.channels[x.0];
        self.push(Op::Relu, vec![x.0], c)
    }

    pub fn sigmoid(&mut self, x: Slot) -> Slot {
        let c = self.channels[x.0];
        self.push(Op::Sigmoid, vec![x.0], c)
    }

    pub fn clamp01(&mut self, x: Slot) -> Slot {
        let c = self.channels[x.0];
        self.push(Op::Clamp01, vec![x.0], c)
    }

    pub fn upsample2(&mut self, x: Slot) -> Slot {
        let c = self.channels[x.0];
        self.push(Op::Upsample2, vec![x.0], c)
    }

    pub fn concat(&mut self, a: Slot, b: Slot) -> Slot {
        let c = self.channels[a.0] + self.channels[b.0];
        self.push(Op::Concat, vec![a.0, b.0], c)
    }

    pub fn global_avg_pool(&mut self, x: Slot) -> Slot {
        let c = self.channels[x.0];
        self.push(Op::GlobalAvgPool, vec![x.0], c)
    }

    pub fn finish(self, output: Slot) -> Graph {
        let n_slots = self.channels.len();
        let mut last_use = vec![0; n_slots];
        for (i, node) in self.nodes.iter().enumerate() {
            for &s in &node.inputs {
                last_use[s] = i + 1;
            }
        }
        last_use[output.0] = usize::MAX;
        Graph {
            nodes: self.nodes,
            channels: self.channels,
            output: output.0,
            last_use,
        }
    }
}

impl Graph {
    pub fn input_channels(&self) -> usize {
        self.channels[0]
    }

    pub fn output_channels(&self) -> usize {
        self.channels[self.output]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Peak count of live scalars during `infer` on an `h`x`w` input,
    /// including the im2col scratch of dense convolutions.
    pub fn infer_peak_elems(&self, h: usize, w: usize) -> usize {
        let mut size = vec![(h, w)];
        let mut live = vec![true];
        let mut peak = self.channels[0] * h * w;
        for (i, node) in self.nodes.iter().enumerate() {
            let (hi, wi) = size[node.inputs[0]];
            let (hs, scratch) = match &node.op {
                Op::Conv { cin, geom, .. } => {
                    let (ho, wo) = geom.out_size(hi, wi);
                    let col = if geom.is_pointwise() { 0 } else { cin * geom.kernel * geom.kernel * ho * wo };
                    ((ho, wo), col)
                }
                Op::Depthwise { geom, .. } => (geom.out_size(hi, wi), 0),
                Op::Upsample2 => ((2 * hi, 2 * wi), 0),
                Op::GlobalAvgPool => ((1, 1), 0),
                _ => ((hi, wi), 0),
            };
            size.push(hs);
            live.push(true);
            let resident: usize = live
                .iter()
                .enumerate()
                .filter(|(_, l)| **l)
                .map(|(s, _)| self.channels[s] * size[s].0 * size[s].1)
                .sum();
            peak = peak.max(resident + scratch);
            for &s in &node.inputs {
                if self.last_use[s] == i + 1 {
                    live[s] = false;
                }
            }
        }
        peak
    }

    /// Which side of each kink every ReLU and clamp input lies on.
    pub fn kink_pattern<S: Scalar>(&self, acts: &Activations<S>) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let x = acts.slots[node.inputs[0]].data();
            match node.op {
                Op::Relu => out.extend(x.iter().map(|v| *v > S::zero())),
                Op::Clamp01 => out.extend(x.iter().flat_map(|v| [*v > S::zero(), *v < S::one()])),
                _ => {}
            }
        }
        out
    }

    fn eval<S: Scalar>(&self, node: &Node, params: &ParamStore<S>, ins: &[&Tensor<S>]) -> Tensor<S> {
        match &node.op {
            Op::Conv {
                weight,
                bias,
                cin,
                cout,
                geom,
            } => {
                let (c, h, w) = ins[0].chw();
                assert_eq!(c, *cin, "conv input channels");
                let (y, ho, wo) = kernels::conv_forward(
                    ins[0].data(),
                    c,
                    h,
                    w,
                    params.get(*weight).data(),
                    params.get(*bias).data(),
                    *cout,
                    *geom,
                );
                Tensor::from_vec(&[*cout, ho, wo], y)
            }
            Op::Depthwise {
                weight,
                bias,
                channels,
                geom,
            } => {
                let (c, h, w) = ins[0].chw();
                assert_eq!(c, *channels, "depthwise input channels");
                let (y, ho, wo) = kernels::depthwise_forward(
                    ins[0].data(),
                    c,
                    h,
                    w,
                    params.get(*weight).data(),
                    params.get(*bias).data(),
                    *geom,
                );
                Tensor::from_vec(&[c, ho, wo], y)
            }
            Op::Relu => ins[0].map(|v| v.max(S::zero())),
            Op::Sigmoid => ins[0].map(|v| S::one() / (S::one() + (-v).exp())),
            Op::Clamp01 => ins[0].map(|v| v.max(S::zero()).min(S::one())),
            Op::Upsample2 => {
                let (c, h, w) = ins[0].chw();
                Tensor::from_vec(
                    &[c, 2 * h, 2 * w],
                    kernels::upsample2_forward(ins[0].data(), c, h, w),
                )
            }
            Op::Concat => {
                let (ca, h, w) = ins[0].chw();
                let (cb, hb, wb) = ins[1].chw();
                assert_eq!((h, w), (hb, wb), "concat spatial mismatch");
                let mut data = Vec::with_capacity((ca + cb) * h * w);
                data.extend_from_slice(ins[0].data());
                data.extend_from_slice(ins[1].data());
                Tensor::from_vec(&[ca + cb, h, w], data)
            }
            Op::GlobalAvgPool => {
                let (c, h, w) = ins[0].chw();
                let inv = S::one() / S::lit((h * w) as f64);
                let data = ins[0]
                    .data()
                    .chunks(h * w)
                    .map(|p| p.iter().copied().sum::<S>() * inv)
                    .collect();
                Tensor::from_vec(&[c, 1, 1], data)
            }
        }
    }

    /// Forward pass that keeps every intermediate for [`Graph::backward`].
    pub fn forward<S: Scalar>(&self, params: &ParamStore<S>, x: Tensor<S>) -> Activations<S> {
        assert_eq!(x.chw().0, self.channels[0], "graph input channels");
        let mut slots = Vec::with_capacity(self.nodes.len() + 1);
        slots.push(x);
        for node in &self.nodes {
            let ins: Vec<&Tensor<S>> = node.inputs.iter().map(|&i| &slots[i]).collect();
            let y = self.eval(node, params, &ins);
            slots.push(y);
        }
        Activations {
            slots,
            output: self.output,
        }
    }

    /// Forward pass that drops intermediates as soon as they are dead.
    pub fn infer<S: Scalar>(&self, params: &ParamStore<S>, x: Tensor<S>) -> Tensor<S> {
        assert_eq!(x.chw().0, self.channels[0], "graph input channels");
        let mut slots: Vec<Option<Tensor<S>>> = Vec::with_capacity(self.nodes.len() + 1);
        slots.push(Some(x));
        for (i, node) in self.nodes.iter().enumerate() {
            let y = {
                let ins: Vec<&Tensor<S>> = node
                    .inputs
                    .iter()
                    .map(|&s| slots[s].as_ref().expect("slot freed before last use"))
                    .collect();
                self.eval(node, params, &ins)
            };
            slots.push(Some(y));
            for &s in &node.inputs {
                if self.last_use[s] == i + 1 {
                    slots[s] = None;
                }
            }
        }
        slots[self.output].take().expect("output slot")
    }

    /// Reverse pass from `grad_out` (gradient w.r.t. the output slot).
    ///
    /// Parameter gradients are accumulated into `param_grads` when given; the
    /// input gradient is returned when `want_input_grad`.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        acts: &Activations<S>,
        grad_out: Tensor<S>,
        mut param_grads: Option<&mut Grads<S>>,
        want_input_grad: bool,
    ) -> Option<Tensor<S>> {
        let n_slots = self.nodes.len() + 1;
        assert_eq!(grad_out.shape(), acts.slots[self.output].shape());
        let has_params = param_grads.is_some();
        // Whether a slot's gradient is needed by anything upstream of it.
        let mut needs = vec![false; n_slots];
        needs[0] = want_input_grad;
        for (i, node) in self.nodes.iter().enumerate() {
            let own = has_params && matches!(node.op, Op::Conv { .. } | Op::Depthwise { .. });
            needs[i + 1] = own || node.inputs.iter().any(|&s| needs[s]);
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; n_slots];
        grads[self.output] = Some(grad_out);
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let slot = i + 1;
            let Some(gy) = grads[slot].take() else {
                continue;
            };
            if !needs[slot] {
                continue;
            }
            let input_needed: Vec<bool> = node.inputs.iter().map(|&s| needs[s]).collect();
            let x = &acts.slots[node.inputs[0]];
            let y = &acts.slots[slot];
            let gxs: Vec<Option<Tensor<S>>> = match &node.op {
                Op::Conv {
                    weight,
                    bias,
                    cin,
                    cout,
                    geom,
                } => {
                    let (c, h, w) = x.chw();
                    let pg = param_grads.as_deref_mut().map(|g| g.pair_mut(*weight, *bias));
                    let gx = kernels::conv_backward(
                        x.data(),
                        c,
                        h,
                        w,
                        params.get(*weight).data(),
                        *cout,
                        *geom,
                        gy.data(),
                        pg,
                        input_needed[0],
                    );
                    debug_assert_eq!(c, *cin);
                    vec![gx.map(|g| Tensor::from_vec(&[c, h, w], g))]
                }
                Op::Depthwise {
                    weight,
                    bias,
                    geom,
                    ..
                } => {
                    let (c, h, w) = x.chw();
                    let pg = param_grads.as_deref_mut().map(|g| g.pair_mut(*weight, *bias));
                    let gx = kernels::depthwise_backward(
                        x.data(),
                        c,
                        h,
                        w,
                        params.get(*weight).data(),
                        *geom,
                        gy.data(),
                        pg,
                        input_needed[0],
                    );
                    vec![gx.map(|g| Tensor::from_vec(&[c, h, w], g))]
                }
                Op::Relu => {
                    let data = gy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &v)| if v > S::zero() { g } else { S::zero() })
                        .collect();
                    vec![Some(Tensor::from_vec(x.shape(), data))]
                }
                Op::Sigmoid => {
                    let data = gy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &v)| g * v * (S::one() - v))
                        .collect();
                    vec![Some(Tensor::from_vec(x.shape(), data))]
                }
                Op::Clamp01 => {
                    let data = gy
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&g, &v)| {
                            if v > S::zero() && v < S::one() {
                                g
                            } else {
                                S::zero()
                            }
                        })
                        .collect();
                    vec![Some(Tensor::from_vec(x.shape(), data))]
                }
                Op::Upsample2 => {
                    let (c, h, w) = x.chw();
                    vec![Some(Tensor::from_vec(
                        &[c, h, w],
                        kernels::upsample2_backward(gy.data(), c, h, w),
                    ))]
                }
                Op::Concat => {
                    let (ca, h, w) = x.chw();
                    let b = &acts.slots[node.inputs[1]];
                    let split = ca * h * w;
                    let (ga, gb) = gy.data().split_at(split);
                    vec![
                        Some(Tensor::from_vec(&[ca, h, w], ga.to_vec())),
                        Some(Tensor::from_vec(b.shape(), gb.to_vec())),
                    ]
                }
                Op::GlobalAvgPool => {
                    let (c, h, w) = x.chw();
                    let inv = S::one() / S::lit((h * w) as f64);
                    let mut data = Vec::with_capacity(c * h * w);
                    for &g in gy.data() {
                        data.extend(std::iter::repeat_n(g * inv, h * w));
                    }
                    vec![Some(Tensor::from_vec(&[c, h, w], data))]
                }
            };
            for ((&s, gx), needed) in node.inputs.iter().zip(gxs).zip(input_needed) {
                let Some(gx) = gx else { continue };
                if !needed {
                    continue;
                }
                match &mut grads[s] {
                    Some(acc) => acc.add_assign(&gx),
                    slot @ None => *slot = Some(gx),
                }
            }
        }
        if want_input_grad {
            Some(grads[0].take().unwrap_or_else(|| Tensor::zeros(acts.slots[0].shape())))
        } else {
            None
        }
    }
}
