//! Internal network engine: parameter store, layers, batched forward and
//! backward passes. Everything runs in f64.
//!
//! Feature maps use the layout `data[((b*C + c)*H + y)*W + x]`; dense stages
//! keep `h = w = 1` with the feature index in `c`.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Batch-norm epsilon and running-statistic momentum.
pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;
/// Initial PReLU slope; fixed leaky-ReLU slope.
pub(crate) const PRELU_INIT: f64 = 0.25;
pub(crate) const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    PRelu,
    LeakyRelu,
    Tanh,
    Swish,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::PRelu => "prelu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Swish => "swish",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "prelu" => Activation::PRelu,
            "leaky_relu" => Activation::LeakyRelu,
            "tanh" => Activation::Tanh,
            "swish" => Activation::Swish,
            other => return Err(Error::Format(format!("unknown activation '{other}'"))),
        })
    }

    /// He initialization for rectifier-family activations, Glorot otherwise.
    fn init_std(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Activation::Relu | Activation::PRelu | Activation::LeakyRelu | Activation::Swish => {
                (2.0 / fan_in as f64).sqrt()
            }
            Activation::Sigmoid | Activation::Tanh => (2.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Batched feature map.
#[derive(Debug, Clone)]
pub(crate) struct Feat {
    pub data: Vec<f64>,
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Feat {
    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Feat {
        Feat {
            data: vec![0.0; b * c * h * w],
            b,
            c,
            h,
            w,
        }
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    pub fn per_sample(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Flat parameter vector with named slices.
#[derive(Debug, Clone, Default)]
pub(crate) struct ParamStore {
    pub data: Vec<f64>,
    pub names: Vec<(String, Range<usize>)>,
}

impl ParamStore {
    fn alloc(&mut self, name: &str, len: usize, fill: f64) -> Range<usize> {
        let start = self.data.len();
        self.data.resize(start + len, fill);
        let range = start..start + len;
        self.names.push((name.to_string(), range.clone()));
        range
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv {
        in_c: usize,
        out_c: usize,
        kh: usize,
        kw: usize,
        h: usize,
        w: usize,
        weights: Range<usize>,
        bias: Range<usize>,
    },
    BatchNorm {
        channels: usize,
        gamma: Range<usize>,
        beta: Range<usize>,
        run_mean: Range<usize>,
        run_var: Range<usize>,
    },
    Act {
        kind: Activation,
        slope: Option<Range<usize>>,
    },
    MaxPool2 {
        in_h: usize,
        in_w: usize,
    },
    Flatten {
        c: usize,
        h: usize,
        w: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
        weights: Range<usize>,
        bias: Range<usize>,
    },
}

/// Per-layer values saved by the training forward pass for backprop.
pub(crate) enum Cache {
    Conv { cols: DMatrix<f64> },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Act { input: Vec<f64> },
    MaxPool2 { argmax: Vec<usize> },
    Flatten,
    Dense { input: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct Network {
    pub layers: Vec<Layer>,
    pub params: ParamStore,
    /// Non-trainable state: batch-norm running statistics.
    pub state: ParamStore,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_dim: usize,
}

/// Declarative layer stack used by the builder; tests construct small custom
/// stacks directly, the encoder architecture expands to one of these.
#[derive(Debug, Clone)]
pub(crate) enum LayerPlan {
    Conv { out_c: usize, kh: usize, kw: usize },
    BatchNorm,
    Act(Activation),
    MaxPool2,
    Flatten,
    Dense { out_dim: usize },
}

impl Network {
    /// Builds and initializes a network for `in_c x in_h x in_w` inputs.
    pub fn build(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        plan: &[LayerPlan],
        seed: u64,
    ) -> Result<Network> {
        let mut rng = crate::rng::rng_from_seed(seed);
        let mut params = ParamStore::default();
        let mut state = ParamStore::default();
        let mut layers = Vec::new();

        // (c, h, w) of the running shape; dense stages use (dim, 1, 1)
        let mut c = in_c;
        let mut h = in_h;
        let mut w = in_w;
        let mut flattened = false;

        for (li, item) in plan.iter().enumerate() {
            match *item {
                LayerPlan::Conv { out_c, kh, kw } => {
                    if flattened {
                        return Err(Error::Config("conv after flatten".into()));
                    }
                    let fan_in = c * kh * kw;
                    let std = current_act(plan, li).init_std(fan_in, out_c * kh * kw);
                    let weights = params.alloc(&format!("conv{li}.weight"), out_c * fan_in, 0.0);
                    init_normal(&mut params.data[weights.clone()], std, &mut rng);
                    let bias = params.alloc(&format!("conv{li}.bias"), out_c, 0.0);
                    layers.push(Layer::Conv {
                        in_c: c,
                        out_c,
                        kh,
                        kw,
                        h,
                        w,
                        weights,
                        bias,
                    });
                    c = out_c;
                }
                LayerPlan::BatchNorm => {
                    let channels = c;
                    let gamma = params.alloc(&format!("bn{li}.gamma"), channels, 1.0);
                    let beta = params.alloc(&format!("bn{li}.beta"), channels, 0.0);
                    let run_mean = state.alloc(&format!("bn{li}.running_mean"), channels, 0.0);
                    let run_var = state.alloc(&format!("bn{li}.running_var"), channels, 1.0);
                    layers.push(Layer::BatchNorm {
                        channels,
                        gamma,
                        beta,
                        run_mean,
                        run_var,
                    });
                }
                LayerPlan::Act(kind) => {
                    let slope = match kind {
                        Activation::PRelu => {
                            Some(params.alloc(&format!("act{li}.slope"), 1, PRELU_INIT))
                        }
                        _ => None,
                    };
                    layers.push(Layer::Act { kind, slope });
                }
                LayerPlan::MaxPool2 => {
                    if flattened {
                        return Err(Error::Config("pool after flatten".into()));
                    }
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::Config(format!(
                            "max pooling needs even spatial dims, got {h}x{w}"
                        )));
                    }
                    layers.push(Layer::MaxPool2 { in_h: h, in_w: w });
                    h /= 2;
                    w /= 2;
                }
                LayerPlan::Flatten => {
                    layers.push(Layer::Flatten { c, h, w });
                    c = c * h * w;
                    h = 1;
                    w = 1;
                    flattened = true;
                }
                LayerPlan::Dense { out_dim } => {
                    if !flattened {
                        return Err(Error::Config("dense before flatten".into()));
                    }
                    let std = current_act(plan, li).init_std(c, out_dim);
                    let weights = params.alloc(&format!("dense{li}.weight"), out_dim * c, 0.0);
                    init_normal(&mut params.data[weights.clone()], std, &mut rng);
                    let bias = params.alloc(&format!("dense{li}.bias"), out_dim, 0.0);
                    layers.push(Layer::Dense {
                        in_dim: c,
                        out_dim,
                        weights,
                        bias,
                    });
                    c = out_dim;
                }
            }
        }
        if !flattened {
            return Err(Error::Config("network must end in a dense stage".into()));
        }
        Ok(Network {
            layers,
            params,
            state,
            in_c,
            in_h,
            in_w,
            out_dim: c,
        })
    }

    /// Forward pass. `Mode::Train` normalizes with batch statistics and, when
    /// `update_state`, refreshes the running statistics; `Mode::Infer` uses
    /// the stored running statistics and never mutates anything.
    pub fn forward(
        &mut self,
        x: &Feat,
        mode: Mode,
        update_state: bool,
        mut caches: Option<&mut Vec<Cache>>,
    ) -> Feat {
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = forward_layer(
                layer,
                &self.params.data,
                &mut self.state.data,
                &cur,
                mode,
                update_state,
                caches.is_some(),
            );
            if let Some(list) = caches.as_deref_mut() {
                list.push(cache.expect("cache requested"));
            }
            cur = next;
        }
        cur
    }

    /// Inference without any mutation.
    pub fn infer(&self, x: &Feat) -> Feat {
        let mut cur = x.clone();
        let mut state_scratch = self.state.data.clone();
        for layer in &self.layers {
            let (next, _) = forward_layer(
                layer,
                &self.params.data,
                &mut state_scratch,
                &cur,
                Mode::Infer,
                false,
                false,
            );
            cur = next;
        }
        cur
    }

    /// Backward pass over cached activations; accumulates into `grads`
    /// (same layout as `params.data`) and returns the input gradient.
    pub fn backward(&self, caches: &[Cache], dout: Feat, grads: &mut [f64]) -> Feat {
        debug_assert_eq!(caches.len(), self.layers.len());
        let mut cur = dout;
        for (layer, cache) in self.layers.iter().zip(caches.iter()).rev() {
            cur = backward_layer(layer, cache, &self.params.data, cur, grads);
        }
        cur
    }
}

/// Activation the next Act layer in the plan applies, for init scaling.
fn current_act(plan: &[LayerPlan], from: usize) -> Activation {
    plan[from..]
        .iter()
        .find_map(|l| match l {
            LayerPlan::Act(a) => Some(*a),
            _ => None,
        })
        .unwrap_or(Activation::Relu)
}

fn init_normal(slice: &mut [f64], std: f64, rng: &mut ChaCha8Rng) {
    for v in slice {
        let z: f64 = rng.sample(StandardNormal);
        *v = z * std;
    }
}

fn activate(kind: Activation, slope: f64, x: f64) -> f64 {
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::PRelu => {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        }
        Activation::LeakyRelu => {
            if x > 0.0 {
                x
            } else {
                LEAKY_SLOPE * x
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Swish => x / (1.0 + (-x).exp()),
    }
}

fn activate_grad(kind: Activation, slope: f64, x: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => {
            let s = 1.0 / (1.0 + (-x).exp());
            s * (1.0 - s)
        }
        Activation::PRelu => {
            if x > 0.0 {
                1.0
            } else {
                slope
            }
        }
        Activation::LeakyRelu => {
            if x > 0.0 {
                1.0
            } else {
                LEAKY_SLOPE
            }
        }
        Activation::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        Activation::Swish => {
            let s = 1.0 / (1.0 + (-x).exp());
            s + x * s * (1.0 - s)
        }
    }
}

/// im2col for stride-1 "same" zero padding.
fn im2col(x: &Feat, kh: usize, kw: usize) -> DMatrix<f64> {
    let (b, c, h, w) = (x.b, x.c, x.h, x.w);
    let pad_h = (kh - 1) / 2;
    let pad_w = (kw - 1) / 2;
    let rows = c * kh * kw;
    let cols = b * h * w;
    let mut m = DMatrix::<f64>::zeros(rows, cols);
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let col = (bi * h + y) * w + xx;
                for ci in 0..c {
                    for dy in 0..kh {
                        let sy = (y + dy).wrapping_sub(pad_h);
                        if sy >= h {
                            continue;
                        }
                        for dx in 0..kw {
                            let sx = (xx + dx).wrapping_sub(pad_w);
                            if sx >= w {
                                continue;
                            }
                            let row = (ci * kh + dy) * kw + dx;
                            m[(row, col)] = x.data[x.idx(bi, ci, sy, sx)];
                        }
                    }
                }
            }
        }
    }
    m
}

fn col2im(dcols: &DMatrix<f64>, like: &Feat, kh: usize, kw: usize) -> Feat {
    let (b, c, h, w) = (like.b, like.c, like.h, like.w);
    let pad_h = (kh - 1) / 2;
    let pad_w = (kw - 1) / 2;
    let mut out = Feat::zeros(b, c, h, w);
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let col = (bi * h + y) * w + xx;
                for ci in 0..c {
                    for dy in 0..kh {
                        let sy = (y + dy).wrapping_sub(pad_h);
                        if sy >= h {
                            continue;
                        }
                        for dx in 0..kw {
                            let sx = (xx + dx).wrapping_sub(pad_w);
                            if sx >= w {
                                continue;
                            }
                            let row = (ci * kh + dy) * kw + dx;
                            let i = out.idx(bi, ci, sy, sx);
                            out.data[i] += dcols[(row, col)];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn forward_layer(
    layer: &Layer,
    params: &[f64],
    state: &mut [f64],
    x: &Feat,
    mode: Mode,
    update_state: bool,
    want_cache: bool,
) -> (Feat, Option<Cache>) {
    match layer {
        Layer::Conv {
            in_c,
            out_c,
            kh,
            kw,
            h,
            w,
            weights,
            bias,
        } => {
            debug_assert_eq!((x.c, x.h, x.w), (*in_c, *h, *w));
            let cols = im2col(x, *kh, *kw);
            let fan = in_c * kh * kw;
            let w_mat =
                DMatrix::<f64>::from_fn(*out_c, fan, |o, r| params[weights.start + o * fan + r]);
            let out_mat = &w_mat * &cols;
            let mut out = Feat::zeros(x.b, *out_c, *h, *w);
            for bi in 0..x.b {
                for co in 0..*out_c {
                    let bv = params[bias.start + co];
                    for y in 0..*h {
                        for xx in 0..*w {
                            let i = out.idx(bi, co, y, xx);
                            out.data[i] = out_mat[(co, (bi * h + y) * w + xx)] + bv;
                        }
                    }
                }
            }
            let cache = want_cache.then(|| Cache::Conv { cols });
            (out, cache)
        }
        Layer::BatchNorm {
            channels,
            gamma,
            beta,
            run_mean,
            run_var,
        } => {
            let n = x.b * x.h * x.w;
            let mut out = Feat::zeros(x.b, x.c, x.h, x.w);
            let mut xhat = want_cache.then(|| vec![0.0; x.data.len()]);
            let mut inv_stds = want_cache.then(|| vec![0.0; *channels]);
            for ci in 0..*channels {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mut sum = 0.0;
                        for bi in 0..x.b {
                            for y in 0..x.h {
                                for xx in 0..x.w {
                                    sum += x.data[x.idx(bi, ci, y, xx)];
                                }
                            }
                        }
                        let mean = sum / n as f64;
                        let mut var = 0.0;
                        for bi in 0..x.b {
                            for y in 0..x.h {
                                for xx in 0..x.w {
                                    let d = x.data[x.idx(bi, ci, y, xx)] - mean;
                                    var += d * d;
                                }
                            }
                        }
                        var /= n as f64;
                        if update_state {
                            // PyTorch-style: running variance tracks the
                            // unbiased estimate when possible
                            let unbiased = if n > 1 {
                                var * n as f64 / (n - 1) as f64
                            } else {
                                var
                            };
                            let rm = &mut state[run_mean.start + ci];
                            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean;
                            let rv = &mut state[run_var.start + ci];
                            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased;
                        }
                        (mean, var)
                    }
                    Mode::Infer => (state[run_mean.start + ci], state[run_var.start + ci]),
                };
                let inv_std = 1.0 / (var + BN_EPS).sqrt();
                if let Some(is) = inv_stds.as_deref_mut() {
                    is[ci] = inv_std;
                }
                let g = params[gamma.start + ci];
                let b = params[beta.start + ci];
                for bi in 0..x.b {
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            let i = x.idx(bi, ci, y, xx);
                            let xh = (x.data[i] - mean) * inv_std;
                            if let Some(xh_buf) = xhat.as_deref_mut() {
                                xh_buf[i] = xh;
                            }
                            out.data[i] = g * xh + b;
                        }
                    }
                }
            }
            let cache = want_cache.then(|| Cache::BatchNorm {
                xhat: xhat.unwrap(),
                inv_std: inv_stds.unwrap(),
            });
            (out, cache)
        }
        Layer::Act { kind, slope } => {
            let s = slope.as_ref().map_or(0.0, |r| params[r.start]);
            let mut out = x.clone();
            for v in &mut out.data {
                *v = activate(*kind, s, *v);
            }
            let cache = want_cache.then(|| Cache::Act {
                input: x.data.clone(),
            });
            (out, cache)
        }
        Layer::MaxPool2 { in_h, in_w } => {
            let (oh, ow) = (in_h / 2, in_w / 2);
            let mut out = Feat::zeros(x.b, x.c, oh, ow);
            let mut argmax = want_cache.then(|| vec![0usize; out.data.len()]);
            for bi in 0..x.b {
                for ci in 0..x.c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_i = 0;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = x.idx(bi, ci, 2 * y + dy, 2 * xx + dx);
                                    if x.data[i] > best {
                                        best = x.data[i];
                                        best_i = i;
                                    }
                                }
                            }
                            let o = out.idx(bi, ci, y, xx);
                            out.data[o] = best;
                            if let Some(am) = argmax.as_deref_mut() {
                                am[o] = best_i;
                            }
                        }
                    }
                }
            }
            let cache = want_cache.then(|| Cache::MaxPool2 {
                argmax: argmax.unwrap(),
            });
            (out, cache)
        }
        Layer::Flatten { .. } => {
            // layout already matches (b, c*h*w); only the shape changes
            let out = Feat {
                data: x.data.clone(),
                b: x.b,
                c: x.per_sample(),
                h: 1,
                w: 1,
            };
            (out, want_cache.then(|| Cache::Flatten))
        }
        Layer::Dense {
            in_dim,
            out_dim,
            weights,
            bias,
        } => {
            debug_assert_eq!(x.per_sample(), *in_dim);
            let x_mat = DMatrix::<f64>::from_fn(*in_dim, x.b, |i, bi| x.data[bi * in_dim + i]);
            let w_mat = DMatrix::<f64>::from_fn(*out_dim, *in_dim, |o, i| {
                params[weights.start + o * in_dim + i]
            });
            let mut y = &w_mat * &x_mat;
            for bi in 0..x.b {
                for o in 0..*out_dim {
                    y[(o, bi)] += params[bias.start + o];
                }
            }
            let mut out = Feat::zeros(x.b, *out_dim, 1, 1);
            for bi in 0..x.b {
                for o in 0..*out_dim {
                    out.data[bi * out_dim + o] = y[(o, bi)];
                }
            }
            (out, want_cache.then(|| Cache::Dense { input: x_mat }))
        }
    }
}

fn backward_layer(
    layer: &Layer,
    cache: &Cache,
    params: &[f64],
    dout: Feat,
    grads: &mut [f64],
) -> Feat {
    match (layer, cache) {
        (
            Layer::Conv {
                in_c,
                out_c,
                kh,
                kw,
                h,
                w,
                weights,
                bias,
            },
            Cache::Conv { cols },
        ) => {
            let fan = in_c * kh * kw;
            let mut dy_mat = DMatrix::<f64>::zeros(*out_c, dout.b * h * w);
            for bi in 0..dout.b {
                for co in 0..*out_c {
                    for y in 0..*h {
                        for xx in 0..*w {
                            dy_mat[(co, (bi * h + y) * w + xx)] =
                                dout.data[dout.idx(bi, co, y, xx)];
                        }
                    }
                }
            }
            let dw = &dy_mat * cols.transpose();
            for o in 0..*out_c {
                for r in 0..fan {
                    grads[weights.start + o * fan + r] += dw[(o, r)];
                }
                let mut s = 0.0;
                for col in 0..dy_mat.ncols() {
                    s += dy_mat[(o, col)];
                }
                grads[bias.start + o] += s;
            }
            let w_mat =
                DMatrix::<f64>::from_fn(*out_c, fan, |o, r| params[weights.start + o * fan + r]);
            let dcols = w_mat.transpose() * &dy_mat;
            let like = Feat::zeros(dout.b, *in_c, *h, *w);
            col2im(&dcols, &like, *kh, *kw)
        }
        (
            Layer::BatchNorm {
                channels,
                gamma,
                beta,
                ..
            },
            Cache::BatchNorm { xhat, inv_std },
        ) => {
            let n = dout.b * dout.h * dout.w;
            let mut dx = Feat::zeros(dout.b, dout.c, dout.h, dout.w);
            for ci in 0..*channels {
                let mut sum_dy = 0.0;
                let mut sum_dy_xhat = 0.0;
                for bi in 0..dout.b {
                    for y in 0..dout.h {
                        for xx in 0..dout.w {
                            let i = dout.idx(bi, ci, y, xx);
                            sum_dy += dout.data[i];
                            sum_dy_xhat += dout.data[i] * xhat[i];
                        }
                    }
                }
                grads[beta.start + ci] += sum_dy;
                grads[gamma.start + ci] += sum_dy_xhat;
                let g = params[gamma.start + ci];
                let mean_dy = sum_dy / n as f64;
                let mean_dy_xhat = sum_dy_xhat / n as f64;
                for bi in 0..dout.b {
                    for y in 0..dout.h {
                        for xx in 0..dout.w {
                            let i = dout.idx(bi, ci, y, xx);
                            dx.data[i] = g
                                * inv_std[ci]
                                * (dout.data[i] - mean_dy - xhat[i] * mean_dy_xhat);
                        }
                    }
                }
            }
            dx
        }
        (Layer::Act { kind, slope }, Cache::Act { input }) => {
            let s = slope.as_ref().map_or(0.0, |r| params[r.start]);
            let mut dx = dout;
            if let Some(r) = slope {
                // d/d(slope) = sum over negative inputs of x * dy
                let mut ds = 0.0;
                for (i, &x) in input.iter().enumerate() {
                    if x <= 0.0 {
                        ds += x * dx.data[i];
                    }
                }
                grads[r.start] += ds;
            }
            for (i, v) in dx.data.iter_mut().enumerate() {
                *v *= activate_grad(*kind, s, input[i]);
            }
            dx
        }
        (Layer::MaxPool2 { in_h, in_w }, Cache::MaxPool2 { argmax }) => {
            let mut dx = Feat::zeros(dout.b, dout.c, *in_h, *in_w);
            for (o, &src) in argmax.iter().enumerate() {
                dx.data[src] += dout.data[o];
            }
            dx
        }
        (Layer::Flatten { c, h, w }, Cache::Flatten) => Feat {
            data: dout.data,
            b: dout.b,
            c: *c,
            h: *h,
            w: *w,
        },
        (
            Layer::Dense {
                in_dim,
                out_dim,
                weights,
                bias,
            },
            Cache::Dense { input },
        ) => {
            let b = dout.b;
            let dy = DMatrix::<f64>::from_fn(*out_dim, b, |o, bi| dout.data[bi * out_dim + o]);
            let dw = &dy * input.transpose();
            for o in 0..*out_dim {
                for i in 0..*in_dim {
                    grads[weights.start + o * in_dim + i] += dw[(o, i)];
                }
                let mut s = 0.0;
                for bi in 0..b {
                    s += dy[(o, bi)];
                }
                grads[bias.start + o] += s;
            }
            let w_mat = DMatrix::<f64>::from_fn(*out_dim, *in_dim, |o, i| {
                params[weights.start + o * in_dim + i]
            });
            let dx_mat = w_mat.transpose() * &dy;
            let mut dx = Feat::zeros(b, *in_dim, 1, 1);
            for bi in 0..b {
                for i in 0..*in_dim {
                    dx.data[bi * in_dim + i] = dx_mat[(i, bi)];
                }
            }
            dx
        }
        _ => unreachable!("cache kind matches layer kind"),
    }
}

/// Softmax cross-entropy over logits shaped (b, k): returns the mean loss
/// and the logit gradient.
pub(crate) fn softmax_cross_entropy(logits: &Feat, labels: &[usize]) -> (f64, Feat) {
    let b = logits.b;
    let k = logits.c;
    debug_assert_eq!(labels.len(), b);
    let mut loss = 0.0;
    let mut dlogits = Feat::zeros(b, k, 1, 1);
    for bi in 0..b {
        let row = &logits.data[bi * k..(bi + 1) * k];
        let maxv = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - maxv).exp();
        }
        let log_denom = denom.ln() + maxv;
        loss += log_denom - row[labels[bi]];
        for ki in 0..k {
            let p = (row[ki] - log_denom).exp();
            dlogits.data[bi * k + ki] =
                (p - if ki == labels[bi] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss / b as f64, dlogits)
}

/// Index of the largest logit; ties resolve to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
