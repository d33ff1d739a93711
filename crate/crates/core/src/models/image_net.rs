//! Image-to-image networks whose spatial size must be a multiple of `align`.
//! Other sizes are reflect-padded on the way in and center-cropped on the way
//! out; the backward pass applies the adjoint of both.

use taskmask_nn::{Activations, Grads, Graph, ParamStore, Scalar, Tensor};

/// Amount added on each side to reach a multiple of `align`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn for_size(h: usize, w: usize, align: usize) -> Self {
        let ph = h.div_ceil(align) * align - h;
        let pw = w.div_ceil(align) * align - w;
        Self {
            top: ph / 2,
            bottom: ph - ph / 2,
            left: pw / 2,
            right: pw - pw / 2,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.top + self.bottom + self.left + self.right == 0
    }
}

/// Reflect-101 source index for padded coordinate `i` (may be negative).
pub fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

pub fn pad_reflect<S: Scalar>(x: &Tensor<S>, p: Padding) -> Tensor<S> {
    if p.is_zero() {
        return x.clone();
    }
    let (c, h, w) = x.chw();
    let (ho, wo) = (h + p.top + p.bottom, w + p.left + p.right);
    let mut out = vec![S::zero(); c * ho * wo];
    let src = x.data();
    for ch in 0..c {
        for y in 0..ho {
            let sy = reflect101(y as isize - p.top as isize, h);
            for xx in 0..wo {
                let sx = reflect101(xx as isize - p.left as isize, w);
                out[(ch * ho + y) * wo + xx] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

/// Adjoint of [`pad_reflect`]: folds the gradient of the padded tensor back.
pub fn pad_reflect_adjoint<S: Scalar>(g: &Tensor<S>, p: Padding) -> Tensor<S> {
    if p.is_zero() {
        return g.clone();
    }
    let (c, ho, wo) = g.chw();
    let (h, w) = (ho - p.top - p.bottom, wo - p.left - p.right);
    let mut out = vec![S::zero(); c * h * w];
    let src = g.data();
    for ch in 0..c {
        for y in 0..ho {
            let sy = reflect101(y as isize - p.top as isize, h);
            for xx in 0..wo {
                let sx = reflect101(xx as isize - p.left as isize, w);
                out[(ch * h + sy) * w + sx] += src[(ch * ho + y) * wo + xx];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

pub fn crop<S: Scalar>(x: &Tensor<S>, p: Padding) -> Tensor<S> {
    if p.is_zero() {
        return x.clone();
    }
    let (c, ho, wo) = x.chw();
    let (h, w) = (ho - p.top - p.bottom, wo - p.left - p.right);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * ho + y + p.top) * wo + p.left;
            out.extend_from_slice(&x.data()[row..row + w]);
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Adjoint of [`crop`]: zero-embeds the gradient into the padded frame.
pub fn crop_adjoint<S: Scalar>(g: &Tensor<S>, p: Padding) -> Tensor<S> {
    if p.is_zero() {
        return g.clone();
    }
    let (c, h, w) = g.chw();
    let (ho, wo) = (h + p.top + p.bottom, w + p.left + p.right);
    let mut out = vec![S::zero(); c * ho * wo];
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * ho + y + p.top) * wo + p.left;
            out[row..row + w].copy_from_slice(&g.data()[(ch * h + y) * w..(ch * h + y + 1) * w]);
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

/// One forward pass kept for the backward pass.
pub struct Pass<S> {
    acts: Activations<S>,
    pad: Padding,
    output: Tensor<S>,
}

impl<S: Scalar> Pass<S> {
    /// Output at the original input size.
    pub fn output(&self) -> &Tensor<S> {
        &self.output
    }
}

#[derive(Clone, Debug)]
pub struct ImageNet {
    pub graph: Graph,
    pub align: usize,
}

impl ImageNet {
    pub fn forward<S: Scalar>(&self, params: &ParamStore<S>, x: Tensor<S>) -> Pass<S> {
        let (_, h, w) = x.chw();
        let pad = Padding::for_size(h, w, self.align);
        let acts = self.graph.forward(params, pad_reflect(&x, pad));
        let output = crop(acts.output(), pad);
        Pass { acts, pad, output }
    }

    pub fn infer<S: Scalar>(&self, params: &ParamStore<S>, x: Tensor<S>) -> Tensor<S> {
        let (_, h, w) = x.chw();
        let pad = Padding::for_size(h, w, self.align);
        crop(&self.graph.infer(params, pad_reflect(&x, pad)), pad)
    }

    /// Peak live scalars of `infer` on an `h`x`w` input, padding included.
    pub fn infer_peak_elems(&self, h: usize, w: usize) -> usize {
        let p = Padding::for_size(h, w, self.align);
        let (hp, wp) = (h + p.top + p.bottom, w + p.left + p.right);
        self.graph.input_channels() * h * w + self.graph.infer_peak_elems(hp, wp)
    }

    /// Activation pattern of `pass`, for kink-aware gradient checks.
    pub fn kink_pattern<S: Scalar>(&self, pass: &Pass<S>) -> Vec<bool> {
        self.graph.kink_pattern(&pass.acts)
    }

    /// Backward from the gradient of the cropped output.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        pass: &Pass<S>,
        grad_out: &Tensor<S>,
        grads: Option<&mut Grads<S>>,
        want_input_grad: bool,
    ) -> Option<Tensor<S>> {
        let g = crop_adjoint(grad_out, pass.pad);
        self.graph
            .backward(params, &pass.acts, g, grads, want_input_grad)
            .map(|gx| pad_reflect_adjoint(&gx, pass.pad))
    }
}
