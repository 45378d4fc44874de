use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DepthMap, MAX_RANGE_MM};
use crate::error::{Error, Result};

/// Simulated LiDAR: range cut-off, point budget and sampling seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparsifyConfig {
    pub max_range_mm: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        Self {
            max_range_mm: MAX_RANGE_MM,
            n_points: 8000,
            seed: 0,
        }
    }
}

impl SparsifyConfig {
    /// Derived config for sample `index`, so every frame of a dataset draws
    /// an independent but reproducible subset.
    pub fn for_sample(&self, index: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(index.wrapping_add(0x5eed))),
            ..self.clone()
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Keeps `min(n_points, eligible)` pixels of `dense`, drawn uniformly without
/// replacement from those with `0 < depth <= max_range_mm`; every other pixel
/// becomes 0.
pub fn sparsify_depth(dense: &DepthMap, cfg: &SparsifyConfig) -> Result<DepthMap> {
    assert!(cfg.n_points >= 1 && cfg.max_range_mm > 0.0, "invalid sparsify config");
    let eligible: Vec<usize> = dense
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0 && d <= cfg.max_range_mm)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligiblePoints {
            max_range_mm: cfg.max_range_mm,
        });
    }
    let keep = cfg.n_points.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen = rand::seq::index::sample(&mut rng, eligible.len(), keep);

    let mut out = DepthMap::filled(dense.height(), dense.width(), 0.0);
    for k in chosen.iter() {
        let i = eligible[k];
        out.data_mut()[i] = dense.data()[i];
    }
    Ok(out)
}
