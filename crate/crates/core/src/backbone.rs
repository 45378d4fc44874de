//! Bottleneck residual network with a feature pyramid on top.

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvNormAct, Init, InitRng};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub width_multiplier: f64,
    pub stage_block_counts: [usize; 4],
    pub fpn_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BackboneConfig {
    /// ResNet-50 layout with 256 pyramid channels.
    pub fn resnet50() -> Self {
        Self {
            width_multiplier: 1.0,
            stage_block_counts: [3, 4, 6, 3],
            fpn_channels: 256,
        }
    }

    pub fn desk() -> Self {
        Self {
            width_multiplier: 0.25,
            stage_block_counts: [1, 1, 1, 1],
            fpn_channels: 64,
        }
    }

    /// Smallest useful network, for tests and gradient checks.
    pub fn micro() -> Self {
        Self {
            width_multiplier: 0.0625,
            stage_block_counts: [1, 1, 1, 1],
            fpn_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::Config {
                key: "backbone.width_multiplier".into(),
                message: "must be positive".into(),
            });
        }
        if self.stage_block_counts.contains(&0) {
            return Err(Error::Config {
                key: "backbone.stage_block_counts".into(),
                message: "every stage needs at least one block".into(),
            });
        }
        if self.fpn_channels == 0 {
            return Err(Error::Config {
                key: "backbone.fpn_channels".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }

    fn width(&self, base: usize) -> usize {
        ((base as f64 * self.width_multiplier).round() as usize).max(4)
    }

    pub fn stem_channels(&self) -> usize {
        self.width(64)
    }

    /// Output channels of stage `i` (four times its bottleneck width).
    pub fn stage_channels(&self, i: usize) -> usize {
        4 * self.width(64 << i)
    }
}

/// Four maps at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid<'t> {
    pub p4: Var<'t>,
    pub p8: Var<'t>,
    pub p16: Var<'t>,
    pub p32: Var<'t>,
}

impl<'t> FeaturePyramid<'t> {
    pub fn levels(&self) -> [Var<'t>; 4] {
        [self.p4, self.p8, self.p16, self.p32]
    }
}

#[derive(Clone, Debug)]
struct Bottleneck {
    reduce: ConvNormAct,
    spatial: ConvNormAct,
    expand: ConvNormAct,
    shortcut: Option<ConvNormAct>,
}

impl Bottleneck {
    fn new(key: &str, input: usize, width: usize, stride: usize) -> Self {
        let out = 4 * width;
        Self {
            reduce: ConvNormAct::new(Conv2d::new(format!("{key}.conv1"), input, width, 1)),
            spatial: ConvNormAct::new(Conv2d::new(format!("{key}.conv2"), width, width, 3).stride(stride)),
            expand: ConvNormAct::new(Conv2d::new(format!("{key}.conv3"), width, out, 1)).linear(),
            shortcut: (stride != 1 || input != out).then(|| {
                ConvNormAct::new(Conv2d::new(format!("{key}.shortcut"), input, out, 1).stride(stride)).linear()
            }),
        }
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let y = self.expand.forward(p, self.spatial.forward(p, self.reduce.forward(p, x)));
        let skip = match &self.shortcut {
            Some(s) => s.forward(p, x),
            None => x,
        };
        y.add(skip).relu()
    }
}

impl Init for Bottleneck {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.reduce.init(store, rng);
        self.spatial.init(store, rng);
        self.expand.init(store, rng);
        if let Some(s) = &self.shortcut {
            s.init(store, rng);
        }
    }
}

/// Residual feature extractor plus top-down pyramid, parameters under `prefix`.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    stem: ConvNormAct,
    stages: Vec<Vec<Bottleneck>>,
    lateral: Vec<Conv2d>,
    smooth: Vec<Conv2d>,
}

impl Backbone {
    pub fn new(prefix: &str, cfg: &BackboneConfig) -> Self {
        let stem_c = cfg.stem_channels();
        let stem = ConvNormAct::new(Conv2d::new(format!("{prefix}.stem"), 3, stem_c, 7).stride(2));
        let mut input = stem_c;
        let mut stages = Vec::new();
        for (i, &count) in cfg.stage_block_counts.iter().enumerate() {
            let width = cfg.stage_channels(i) / 4;
            let blocks = (0..count)
                .map(|j| {
                    let stride = if i > 0 && j == 0 { 2 } else { 1 };
                    let b = Bottleneck::new(&format!("{prefix}.stage{i}.block{j}"), input, width, stride);
                    input = 4 * width;
                    b
                })
                .collect();
            stages.push(blocks);
        }
        let c = cfg.fpn_channels;
        Self {
            cfg: cfg.clone(),
            stem,
            stages,
            lateral: (0..4)
                .map(|i| Conv2d::new(format!("{prefix}.fpn.lateral{i}"), cfg.stage_channels(i), c, 1))
                .collect(),
            smooth: (0..4)
                .map(|i| Conv2d::new(format!("{prefix}.fpn.smooth{i}"), c, c, 3))
                .collect(),
        }
    }

    /// `rgb` is `[N, 3, H, W]` with `H` and `W` multiples of 32.
    pub fn forward<'t>(&self, p: &Bound<'t>, rgb: Var<'t>) -> Result<FeaturePyramid<'t>> {
        let shape = rgb.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!("backbone expects [N, 3, H, W], got {shape:?}")));
        }
        let (h, w) = (shape[2], shape[3]);
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("backbone input {h}x{w} is not a multiple of 32")));
        }
        let mut x = autodiff::max_pool2d(self.stem.forward(p, rgb), 3, 2, 1);
        let mut taps = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(p, x);
            }
            taps.push(x);
        }
        let mut merged: Vec<Option<Var<'t>>> = vec![None; 4];
        let mut above: Option<Var<'t>> = None;
        for i in (0..4).rev() {
            let lat = self.lateral[i].forward(p, taps[i]);
            let m = match above {
                Some(up) => {
                    let s = lat.shape();
                    lat.add(autodiff::resize_nearest(up, s[2], s[3]))
                }
                None => lat,
            };
            merged[i] = Some(m);
            above = Some(m);
        }
        let out: Vec<Var<'t>> = merged
            .into_iter()
            .zip(&self.smooth)
            .map(|(m, conv)| conv.forward(p, m.expect("every level merged")))
            .collect();
        Ok(FeaturePyramid {
            p4: out[0],
            p8: out[1],
            p16: out[2],
            p32: out[3],
        })
    }
}

impl Init for Backbone {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.stem.init(store, rng);
        for block in self.stages.iter().flatten() {
            block.init(store, rng);
        }
        for conv in self.lateral.iter().chain(&self.smooth) {
            conv.init(store, rng);
        }
    }
}

/// Runs the backbone whose parameters live under the `backbone` prefix.
pub fn extract_pyramid<'t>(rgb: Var<'t>, params: &Bound<'t>, cfg: &BackboneConfig) -> Result<FeaturePyramid<'t>> {
    Backbone::new("backbone", cfg).forward(params, rgb)
}
