//! Refines semantic logits with a dense depth map.

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init, InitRng};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointConfig {
    /// Width of the three hidden convolutions.
    pub channels: usize,
    /// Block semantic-loss gradients from reaching the depth input.
    pub stop_depth_gradient: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            stop_depth_gradient: false,
        }
    }
}

/// Four 3x3 convolutions over `concat(logits, depth / max_range)`.
#[derive(Clone, Debug)]
pub struct JointHead {
    pub nc: usize,
    pub max_range_mm: f64,
    pub stop_depth_gradient: bool,
    convs: [Conv2d; 4],
}

impl JointHead {
    pub fn new(prefix: &str, nc: usize, max_range_mm: f64, cfg: &JointConfig) -> Self {
        let c = cfg.channels;
        Self {
            nc,
            max_range_mm,
            stop_depth_gradient: cfg.stop_depth_gradient,
            convs: [
                Conv2d::new(format!("{prefix}.conv0"), nc + 1, c, 3),
                Conv2d::new(format!("{prefix}.conv1"), c, c, 3),
                Conv2d::new(format!("{prefix}.conv2"), c, c, 3),
                Conv2d::new(format!("{prefix}.conv3"), c, nc, 3),
            ],
        }
    }

    /// `logits` is `[N, nc, H, W]`, `depth_mm` is `[N, 1, H, W]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, logits: Var<'t>, depth_mm: Var<'t>) -> Result<Var<'t>> {
        let (ls, ds) = (logits.shape(), depth_mm.shape());
        if ls.len() != 4 || ds.len() != 4 || ls[0] != ds[0] || ls[2..] != ds[2..] || ds[1] != 1 || ls[1] != self.nc {
            return Err(Error::ShapeMismatch(format!("joint head got logits {ls:?} and depth {ds:?}")));
        }
        let depth = if self.stop_depth_gradient {
            autodiff::stop_gradient(depth_mm)
        } else {
            depth_mm
        };
        let mut x = autodiff::concat_channels(&[logits, depth.scale(1.0 / self.max_range_mm)]);
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(p, x);
            if i < 3 {
                x = x.relu();
            }
        }
        Ok(x)
    }
}

impl Init for JointHead {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.convs.iter().for_each(|c| c.init(store, rng));
    }
}
