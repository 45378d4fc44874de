use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ImageSample, MAX_RANGE_MM};
use crate::error::{Error, Result};
use crate::losses::depth_mask;
use crate::metrics::{ConfusionCounts, SquaredError};
use crate::params::ParamStore;
use crate::zoo::{Model, Output, Prediction};

/// Anything that maps samples to label and depth maps.
pub trait Predictor {
    fn name(&self) -> String;
    fn outputs(&self) -> &[Output];
    fn predict(&self, samples: &[ImageSample]) -> Result<Vec<Prediction>>;
}

/// A model with a fixed parameter set.
pub struct Trained<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore,
}

impl Predictor for Trained<'_> {
    fn name(&self) -> String {
        self.model.spec.label.to_owned()
    }

    fn outputs(&self) -> &[Output] {
        self.model.spec.outputs
    }

    fn predict(&self, samples: &[ImageSample]) -> Result<Vec<Prediction>> {
        self.model.predict(self.params, samples)
    }
}

/// Echoes the ground truth back; scores perfectly by construction.
pub struct GroundTruthStub {
    pub outputs: Vec<Output>,
}

impl Predictor for GroundTruthStub {
    fn name(&self) -> String {
        "ground-truth-stub".into()
    }

    fn outputs(&self) -> &[Output] {
        &self.outputs
    }

    fn predict(&self, samples: &[ImageSample]) -> Result<Vec<Prediction>> {
        samples
            .iter()
            .map(|s| {
                let want = |o| self.outputs.contains(&o);
                Ok(Prediction {
                    sample_id: s.sample_id.clone(),
                    labels: if want(Output::Semantic) {
                        Some(s.semantic_gt.clone().ok_or(Error::MissingInput("semantic_gt"))?)
                    } else {
                        None
                    },
                    depth: if want(Output::Depth) {
                        Some(
                            s.dense_depth_gt
                                .clone()
                                .or_else(|| s.sparse_depth.clone())
                                .ok_or(Error::MissingInput("dense_depth_gt"))?,
                        )
                    } else {
                        None
                    },
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub ignore_id: Option<u32>,
    pub max_range_mm: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            ignore_id: None,
            max_range_mm: MAX_RANGE_MM,
        }
    }
}

/// Split-level metrics. A metric is `None` when the variant has no
/// corresponding output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub miou: Option<f64>,
    pub rmse_mm: Option<f64>,
    pub n_samples: usize,
    pub config_digest: String,
}

/// SHA-256 of the JSON form of `cfg`.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("configs serialize");
    hex::encode(Sha256::digest(json))
}

/// Pools confusion counts and squared errors over the whole split. Depth is
/// scored against the dense ground truth when a sample has one, otherwise
/// against its sparse map, on pixels with `0 < gt <= max_range_mm`.
pub fn evaluate(
    predictor: &dyn Predictor,
    nc: usize,
    samples: &[ImageSample],
    cfg: &EvalConfig,
    config_digest: &str,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptySplit);
    }
    let wants = |o| predictor.outputs().contains(&o);
    let mut confusion = ConfusionCounts::new(nc);
    let mut squared = SquaredError::default();
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let preds = predictor.predict(chunk)?;
        for (s, p) in chunk.iter().zip(&preds) {
            if wants(Output::Semantic) {
                let gt = s.semantic_gt.as_ref().ok_or(Error::MissingInput("semantic_gt"))?;
                let labels = p.labels.as_ref().expect("semantic predictor returns labels");
                confusion.add(labels.data(), gt.data(), cfg.ignore_id)?;
            }
            if wants(Output::Depth) {
                let gt = s
                    .dense_depth_gt
                    .as_ref()
                    .or(s.sparse_depth.as_ref())
                    .ok_or(Error::MissingInput("dense_depth_gt"))?;
                let depth = p.depth.as_ref().expect("depth predictor returns depth");
                squared.add(depth.data(), gt.data(), &depth_mask(gt.data(), Some(cfg.max_range_mm)));
            }
        }
    }
    Ok(MetricsReport {
        variant: predictor.name(),
        miou: if wants(Output::Semantic) { Some(confusion.miou()?) } else { None },
        rmse_mm: if wants(Output::Depth) { Some(squared.rmse()?) } else { None },
        n_samples: samples.len(),
        config_digest: config_digest.to_owned(),
    })
}
