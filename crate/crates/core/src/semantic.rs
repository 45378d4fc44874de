//! Semantic head: context cells on the coarse levels, detail extractors on the
//! fine levels, and upsampling correction modules chaining them together.

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Var};
use crate::backbone::FeaturePyramid;
use crate::nn::{Conv2d, ConvNormAct, Init, InitRng};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemanticConfig {
    /// Width of every internal map.
    pub head_channels: usize,
    /// Also apply the semantic loss to the preliminary logits.
    pub supervise_preliminary: bool,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            head_channels: 128,
            supervise_preliminary: false,
        }
    }
}

/// Three 3x3 conv-norm-ReLU layers.
#[derive(Clone, Debug)]
pub struct Lsfe {
    layers: [ConvNormAct; 3],
}

impl Lsfe {
    pub fn new(key: &str, input: usize, channels: usize) -> Self {
        Self {
            layers: [
                ConvNormAct::new(Conv2d::new(format!("{key}.conv0"), input, channels, 3)),
                ConvNormAct::new(Conv2d::new(format!("{key}.conv1"), channels, channels, 3)),
                ConvNormAct::new(Conv2d::new(format!("{key}.conv2"), channels, channels, 3)),
            ],
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        self.layers.iter().fold(x, |x, l| l.forward(p, x))
    }
}

impl Init for Lsfe {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.layers.iter().for_each(|l| l.init(store, rng));
    }
}

/// Depth-wise 3x3 atrous convolution followed by a point-wise projection.
#[derive(Clone, Debug)]
struct SeparableConv {
    depthwise: Conv2d,
    pointwise: ConvNormAct,
}

impl SeparableConv {
    fn new(key: &str, input: usize, output: usize, rate: (usize, usize)) -> Self {
        Self {
            depthwise: Conv2d::new(format!("{key}.depthwise"), input, input, 3)
                .groups(input)
                .dilation(rate.0, rate.1)
                .no_bias(),
            pointwise: ConvNormAct::new(Conv2d::new(format!("{key}.pointwise"), input, output, 1)),
        }
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        self.pointwise.forward(p, self.depthwise.forward(p, x))
    }
}

impl Init for SeparableConv {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.depthwise.init(store, rng);
        self.pointwise.init(store, rng);
    }
}

/// (row, col) dilation of each branch, in order.
pub const DPC_RATES: [(usize, usize); 5] = [(1, 6), (1, 1), (6, 21), (18, 15), (6, 3)];
/// Branch whose output feeds each branch; `None` reads the cell input.
const DPC_SOURCES: [Option<usize>; 5] = [None, Some(0), Some(0), Some(0), Some(2)];

/// Five-branch atrous cell: branch outputs are concatenated and projected.
#[derive(Clone, Debug)]
pub struct Dpc {
    branches: Vec<SeparableConv>,
    project: ConvNormAct,
}

impl Dpc {
    pub fn new(key: &str, input: usize, channels: usize) -> Self {
        let branches = DPC_RATES
            .iter()
            .zip(DPC_SOURCES)
            .enumerate()
            .map(|(i, (&rate, src))| {
                let cin = if src.is_none() { input } else { channels };
                SeparableConv::new(&format!("{key}.branch{i}"), cin, channels, rate)
            })
            .collect();
        Self {
            branches,
            project: ConvNormAct::new(Conv2d::new(format!("{key}.project"), 5 * channels, channels, 1)),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let mut outs: Vec<Var<'t>> = Vec::with_capacity(5);
        for (branch, src) in self.branches.iter().zip(DPC_SOURCES) {
            let input = src.map_or(x, |s| outs[s]);
            outs.push(branch.forward(p, input));
        }
        self.project.forward(p, autodiff::concat_channels(&outs))
    }
}

impl Init for Dpc {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.branches.iter().for_each(|b| b.init(store, rng));
        self.project.init(store, rng);
    }
}

/// Three 3x3 conv-norm-ReLU layers, then a 2x bilinear upsample.
#[derive(Clone, Debug)]
pub struct Mc {
    layers: [ConvNormAct; 3],
}

impl Mc {
    pub fn new(key: &str, channels: usize) -> Self {
        let layer = |i: usize| ConvNormAct::new(Conv2d::new(format!("{key}.conv{i}"), channels, channels, 3));
        Self {
            layers: [layer(0), layer(1), layer(2)],
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let y = self.layers.iter().fold(x, |x, l| l.forward(p, x));
        let s = y.shape();
        autodiff::resize_bilinear(y, 2 * s[2], 2 * s[3])
    }
}

impl Init for Mc {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.layers.iter().for_each(|l| l.init(store, rng));
    }
}

/// Pyramid to per-pixel class logits at input resolution.
#[derive(Clone, Debug)]
pub struct SemanticHead {
    pub nc: usize,
    dpc32: Dpc,
    dpc16: Dpc,
    lsfe8: Lsfe,
    lsfe4: Lsfe,
    mc32: Mc,
    mc16: Mc,
    mc8: Mc,
    classifier: Conv2d,
}

impl SemanticHead {
    pub fn new(prefix: &str, fpn_channels: usize, nc: usize, cfg: &SemanticConfig) -> Self {
        let c = cfg.head_channels;
        Self {
            nc,
            dpc32: Dpc::new(&format!("{prefix}.dpc32"), fpn_channels, c),
            dpc16: Dpc::new(&format!("{prefix}.dpc16"), fpn_channels, c),
            lsfe8: Lsfe::new(&format!("{prefix}.lsfe8"), fpn_channels, c),
            lsfe4: Lsfe::new(&format!("{prefix}.lsfe4"), fpn_channels, c),
            mc32: Mc::new(&format!("{prefix}.mc32"), c),
            mc16: Mc::new(&format!("{prefix}.mc16"), c),
            mc8: Mc::new(&format!("{prefix}.mc8"), c),
            classifier: Conv2d::new(format!("{prefix}.classifier"), 4 * c, nc, 1),
        }
    }

    /// Logits `[N, nc, 4h, 4w]` where `h x w` is the size of `pyr.p4`.
    pub fn forward<'t>(&self, p: &Bound<'t>, pyr: &FeaturePyramid<'t>) -> Var<'t> {
        let f32 = self.dpc32.forward(p, pyr.p32);
        let f16 = self.dpc16.forward(p, pyr.p16).add(self.mc32.forward(p, f32));
        let f8 = self.lsfe8.forward(p, pyr.p8).add(self.mc16.forward(p, f16));
        let f4 = self.lsfe4.forward(p, pyr.p4).add(self.mc8.forward(p, f8));
        let s = f4.shape();
        let (h, w) = (s[2], s[3]);
        let up = |x: Var<'t>| autodiff::resize_bilinear(x, h, w);
        let fused = autodiff::concat_channels(&[up(f32), up(f16), up(f8), f4]);
        autodiff::resize_bilinear(self.classifier.forward(p, fused), 4 * h, 4 * w)
    }
}

impl Init for SemanticHead {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.dpc32.init(store, rng);
        self.dpc16.init(store, rng);
        self.lsfe8.init(store, rng);
        self.lsfe4.init(store, rng);
        self.mc32.init(store, rng);
        self.mc16.init(store, rng);
        self.mc8.init(store, rng);
        self.classifier.init(store, rng);
    }
}
