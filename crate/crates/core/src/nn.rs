//! Parameterized layers shared by every branch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{self, ConvGeometry, Var};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

pub type InitRng = ChaCha8Rng;

/// Registers a component's parameters. Children initialize in a fixed order
/// so a seed determines every weight.
pub trait Init {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng);
}

fn he_normal(shape: Vec<usize>, fan_in: usize, rng: &mut InitRng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub key: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub geometry: ConvGeometry,
    pub bias: bool,
}

impl Conv2d {
    /// Stride-1, same-padded convolution with bias.
    pub fn new(key: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            key: key.into(),
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            geometry: ConvGeometry::same((kernel, kernel), (1, 1)),
            bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.geometry.stride = stride;
        self
    }

    pub fn dilation(mut self, rows: usize, cols: usize) -> Self {
        let groups = self.geometry.groups;
        let stride = self.geometry.stride;
        self.geometry = ConvGeometry::same(self.kernel, (rows, cols))
            .with_stride(stride)
            .with_groups(groups);
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.geometry.groups = groups;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.key)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.key)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let bias = self.bias.then(|| p.get(&self.bias_key()));
        autodiff::conv2d(x, p.get(&self.weight_key()), bias, self.geometry)
    }
}

impl Init for Conv2d {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        let per_group = self.in_channels / self.geometry.groups;
        let fan_in = per_group * self.kernel.0 * self.kernel.1;
        let shape = vec![self.out_channels, per_group, self.kernel.0, self.kernel.1];
        store.insert(self.weight_key(), he_normal(shape, fan_in, rng));
        if self.bias {
            store.insert(self.bias_key(), Tensor::zeros([self.out_channels]));
        }
    }
}

/// Group count giving at least four channels per group, capped at 32 groups.
pub fn norm_groups(channels: usize) -> usize {
    let cap = (channels / 4).clamp(1, 32);
    (1..=cap).rev().find(|g| channels % g == 0).unwrap_or(1)
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub key: String,
    pub channels: usize,
    pub groups: usize,
}

impl GroupNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(key: impl Into<String>, channels: usize) -> Self {
        Self {
            key: key.into(),
            channels,
            groups: norm_groups(channels),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        autodiff::group_norm(
            x,
            p.get(&format!("{}.gamma", self.key)),
            p.get(&format!("{}.beta", self.key)),
            self.groups,
            Self::EPS,
        )
    }
}

impl Init for GroupNorm {
    fn init(&self, store: &mut ParamStore, _rng: &mut InitRng) {
        store.insert(format!("{}.gamma", self.key), Tensor::full([self.channels], 1.0));
        store.insert(format!("{}.beta", self.key), Tensor::zeros([self.channels]));
    }
}

/// Bias-free convolution, group normalization, optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv2d,
    pub norm: GroupNorm,
    pub relu: bool,
}

impl ConvNormAct {
    pub fn new(conv: Conv2d) -> Self {
        let norm = GroupNorm::new(format!("{}.norm", conv.key), conv.out_channels);
        Self {
            conv: conv.no_bias(),
            norm,
            relu: true,
        }
    }

    pub fn linear(mut self) -> Self {
        self.relu = false;
        self
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let y = self.norm.forward(p, self.conv.forward(p, x));
        if self.relu {
            y.relu()
        } else {
            y
        }
    }
}

impl Init for ConvNormAct {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.conv.init(store, rng);
        self.norm.init(store, rng);
    }
}

/// Fully connected layer on `[rows, in]` matrices.
#[derive(Clone, Debug)]
pub struct Linear {
    pub key: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(key: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Self {
            key: key.into(),
            in_features,
            out_features,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let y = autodiff::matmul(x, p.get(&format!("{}.weight", self.key)));
        autodiff::add_row_bias(y, p.get(&format!("{}.bias", self.key)))
    }
}

impl Init for Linear {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        store.insert(
            format!("{}.weight", self.key),
            he_normal(vec![self.in_features, self.out_features], self.in_features, rng),
        );
        // Small nonzero bias so a zero offset still yields a nonzero kernel.
        store.insert(
            format!("{}.bias", self.key),
            Tensor::from_fn([self.out_features], |_| 0.1 * rng.sample::<f64, _>(StandardNormal)),
        );
    }
}
