//! Neural feedback encoder: maps a noisy pilot observation directly to a
//! codebook index.
//!
//! The classifier is a stack of convolutional modules (conv + batch norm +
//! activation), an optional 2x2 max pooling, and a fixed dense tail
//! `512 -> 256 -> 128 -> 64 -> K`. Both training and inference are built
//! from scratch on f64 arithmetic so gradients can be verified against
//! finite differences.

mod net;
pub mod search;
pub mod train;

pub use net::{Activation, Mode};
pub(crate) use net::{argmax, Feat, LayerPlan, Network};

use crate::channel::Dataset;
use crate::codebook::Codebook;
use crate::config::Side;
use crate::error::{Error, Result};
use crate::estimation::{observe, select_index};
use crate::linalg::CMat;
use crate::rng::derive_seed;
use nalgebra::DMatrix;

/// Widths of the dense tail before the K-way output layer.
pub const DENSE_TAIL: [usize; 4] = [512, 256, 128, 64];

/// Hyperparameters describing one encoder network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderArchitecture {
    /// Number of convolutional modules.
    pub conv_depth: usize,
    /// Kernels per convolutional layer.
    pub kernels_per_layer: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// Apply one 2x2 max pooling before flattening.
    pub use_max_pool: bool,
    pub activation: Activation,
    pub batch_norm_conv: bool,
    pub batch_norm_dense: bool,
    /// Output classes (codebook size K).
    pub k: usize,
}

impl EncoderArchitecture {
    /// 3x3 kernels, batch norm everywhere, no pooling.
    pub fn new(conv_depth: usize, kernels_per_layer: usize, activation: Activation, k: usize) -> Self {
        EncoderArchitecture {
            conv_depth,
            kernels_per_layer,
            kernel_h: 3,
            kernel_w: 3,
            use_max_pool: false,
            activation,
            batch_norm_conv: true,
            batch_norm_dense: true,
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_depth == 0 || self.kernels_per_layer == 0 {
            return Err(Error::Config(
                "conv depth and kernel count must be positive".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::Config("output width must be positive".into()));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Config("kernel size must be positive".into()));
        }
        Ok(())
    }

    /// Expands the architecture into a concrete layer plan. Every module is
    /// conv/dense + optional batch norm + activation; the final logits layer
    /// has neither normalization nor activation.
    pub(crate) fn plan(&self) -> Vec<LayerPlan> {
        let mut plan = Vec::new();
        for _ in 0..self.conv_depth {
            plan.push(LayerPlan::Conv {
                out_c: self.kernels_per_layer,
                kh: self.kernel_h,
                kw: self.kernel_w,
            });
            if self.batch_norm_conv {
                plan.push(LayerPlan::BatchNorm);
            }
            plan.push(LayerPlan::Act(self.activation));
        }
        if self.use_max_pool {
            plan.push(LayerPlan::MaxPool2);
        }
        plan.push(LayerPlan::Flatten);
        for &dim in DENSE_TAIL.iter() {
            plan.push(LayerPlan::Dense { out_dim: dim });
            if self.batch_norm_dense {
                plan.push(LayerPlan::BatchNorm);
            }
            plan.push(LayerPlan::Act(self.activation));
        }
        plan.push(LayerPlan::Dense { out_dim: self.k });
        plan
    }
}

/// Two real planes (normalized Re and Im of Y), each `n_rx x n_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTensor {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl ObservationTensor {
    pub fn shape(&self) -> (usize, usize) {
        self.re.shape()
    }

    pub(crate) fn write_into(&self, feat: &mut Feat, b: usize) {
        let (h, w) = self.shape();
        for y in 0..h {
            for x in 0..w {
                let re_i = feat.idx(b, 0, y, x);
                feat.data[re_i] = self.re[(y, x)];
                let im_i = feat.idx(b, 1, y, x);
                feat.data[im_i] = self.im[(y, x)];
            }
        }
    }

    pub(crate) fn to_feat(&self) -> Feat {
        let (h, w) = self.shape();
        let mut feat = Feat::zeros(1, 2, h, w);
        self.write_into(&mut feat, 0);
        feat
    }
}

/// Splits Y into real and imaginary planes scaled by `1/||Y||_F`; a zero
/// observation maps to zero planes.
pub fn normalize_observation(y: &CMat) -> ObservationTensor {
    let frob: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let scale = if frob > 0.0 { 1.0 / frob } else { 0.0 };
    ObservationTensor {
        re: DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| y[(r, c)].re * scale),
        im: DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| y[(r, c)].im * scale),
    }
}

/// Training pairs of normalized observation and optimal codebook index.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub items: Vec<(ObservationTensor, usize)>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Builds the labeled set for the `side` channels of `ds`: inputs are noisy
/// pilot observations, labels are the indices the true channel would select.
/// Sample `i` uses the noise seed derived from `(seed, i)`.
pub fn build_labels(
    ds: &Dataset,
    side: Side,
    cb: &Codebook,
    pilot: &CMat,
    sigma_n2: f64,
    seed: u64,
) -> Result<LabeledSet> {
    let mut items = Vec::with_capacity(ds.len());
    for (i, sample) in ds.samples.iter().enumerate() {
        let h = sample.channel(side);
        let obs = observe(h, pilot, sigma_n2, derive_seed(seed, i as u64))?;
        let label = select_index(h, cb, sigma_n2)?;
        items.push((normalize_observation(&obs.y), label));
    }
    Ok(LabeledSet {
        items,
        num_classes: cb.k(),
    })
}

/// A trained (or freshly initialized) encoder network.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub architecture: EncoderArchitecture,
    pub input_rx: usize,
    pub input_p: usize,
    pub(crate) net: Network,
}

impl EncoderModel {
    /// Seeded parameter initialization for `n_rx x n_p` observations.
    pub fn init(
        architecture: EncoderArchitecture,
        n_rx: usize,
        n_p: usize,
        seed: u64,
    ) -> Result<EncoderModel> {
        architecture.validate()?;
        let net = Network::build(2, n_rx, n_p, &architecture.plan(), seed)?;
        Ok(EncoderModel {
            architecture,
            input_rx: n_rx,
            input_p: n_p,
            net,
        })
    }

    /// Logits for one observation tensor.
    ///
    /// `Mode::Infer` uses the stored running statistics and is bit-exactly
    /// deterministic. `Mode::Train` normalizes with the (single-sample)
    /// batch statistics without touching the running statistics; the
    /// training loop is the only place running statistics are updated.
    pub fn forward(&self, x: &ObservationTensor, mode: Mode) -> Result<Vec<f64>> {
        if x.shape() != (self.input_rx, self.input_p) {
            return Err(Error::Dim(format!(
                "observation is {:?}, model expects ({}, {})",
                x.shape(),
                self.input_rx,
                self.input_p
            )));
        }
        let out = match mode {
            Mode::Infer => self.net.infer(&x.to_feat()),
            Mode::Train => {
                let mut scratch = self.net.clone();
                scratch.forward(&x.to_feat(), Mode::Train, false, None)
            }
        };
        Ok(out.data)
    }

    /// Feedback index for a raw observation: argmax of infer-mode logits on
    /// the normalized tensor, ties resolving to the lowest index.
    pub fn predict_index(&self, y: &CMat) -> Result<usize> {
        let logits = self.forward(&normalize_observation(y), Mode::Infer)?;
        Ok(argmax(&logits))
    }

    pub fn param_count(&self) -> usize {
        self.net.params.len()
    }

    /// Infer-mode logits for a whole set, batched.
    pub(crate) fn infer_logits(&self, items: &[(ObservationTensor, usize)]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(items.len());
        let chunk = 1024;
        for group in items.chunks(chunk) {
            let mut feat = Feat::zeros(group.len(), 2, self.input_rx, self.input_p);
            for (b, (obs, _)) in group.iter().enumerate() {
                obs.write_into(&mut feat, b);
            }
            let logits = self.net.infer(&feat);
            let k = logits.c;
            for b in 0..group.len() {
                out.push(logits.data[b * k..(b + 1) * k].to_vec());
            }
        }
        out
    }
}
