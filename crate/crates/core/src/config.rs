//! Run configuration: one TOML document covering data, model, optimizer and
//! evaluation settings. Unknown keys are rejected with their full path, and
//! the serialized form spells out every default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::{crop_sample, ImageSample, SparsifyConfig};
use crate::depth::DepthConfig;
use crate::error::{Error, Result};
use crate::harness::{EvalConfig, OptimConfig, RunSettings, TrainConfig};
use crate::joint::JointConfig;
use crate::semantic::SemanticConfig;
use crate::zoo::{LossConfig, ModelConfig, VariantName};

/// Procedural dataset size and frame shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    /// Shares of the samples assigned to train and val; the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_samples: 32,
            height: 64,
            width: 64,
            train_fraction: 0.5,
            val_fraction: 0.25,
        }
    }
}

impl ToyConfig {
    /// (train, val, test) sample counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let n = self.n_samples;
        let train = ((n as f64 * self.train_fraction).round() as usize).min(n);
        let val = ((n as f64 * self.val_fraction).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory; falls back to `SEMSEGDEPTH_DATA_ROOT`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    pub nc: usize,
    /// `[height, width]` window applied to every loaded sample, if set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<[usize; 2]>,
    /// `[row, col]` of the crop window's top-left corner.
    pub crop_anchor: [usize; 2],
    pub sparsify: SparsifyConfig,
    pub toy: ToyConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            nc: 4,
            crop: None,
            crop_anchor: [0, 0],
            sparsify: SparsifyConfig::default(),
            toy: ToyConfig::default(),
        }
    }
}

impl DataConfig {
    /// Applies the configured crop, if any.
    pub fn prepare(&self, samples: Vec<ImageSample>) -> Result<Vec<ImageSample>> {
        match self.crop {
            None => Ok(samples),
            Some([h, w]) => samples
                .iter()
                .map(|s| crop_sample(s, h, w, (self.crop_anchor[0], self.crop_anchor[1])))
                .collect(),
        }
    }
}

/// Training-loop switches that are not optimizer settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub resample_sparse: bool,
    pub val_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<VariantName>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: VariantName::all().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub variant: VariantName,
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    pub semantic: SemanticConfig,
    pub depth: DepthConfig,
    pub joint: JointConfig,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            variant: VariantName::SemSegDepth,
            data: DataConfig::default(),
            backbone: BackboneConfig::default(),
            semantic: SemanticConfig::default(),
            depth: DepthConfig::default(),
            joint: JointConfig::default(),
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

/// Pulls the offending key out of serde's "unknown field `x`" message.
fn unknown_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            key: String::new(),
            message: e.to_string(),
        })?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().trim().to_owned();
            let key = match unknown_field(&message) {
                Some(field) if path == "." || path.is_empty() => field.to_owned(),
                Some(field) if !path.ends_with(field) => format!("{path}.{field}"),
                _ => path,
            };
            Error::Config { key, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    /// Full TOML form with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        if self.data.nc < 2 {
            return bad("data.nc", "need at least two classes");
        }
        let sp = &self.data.sparsify;
        if sp.n_points == 0 {
            return bad("data.sparsify.n_points", "must be at least 1");
        }
        if !(sp.max_range_mm > 0.0 && sp.max_range_mm.is_finite()) {
            return bad("data.sparsify.max_range_mm", "must be a positive number");
        }
        if let Some([h, w]) = self.data.crop {
            if h == 0 || w == 0 {
                return bad("data.crop", "window must be nonempty");
            }
        }
        let toy = &self.data.toy;
        if toy.height < 16 || toy.width < 16 {
            return bad("data.toy", "frames must be at least 16x16");
        }
        for (key, f) in [("data.toy.train_fraction", toy.train_fraction), ("data.toy.val_fraction", toy.val_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(key, "must lie in [0, 1]");
            }
        }
        if toy.train_fraction + toy.val_fraction > 1.0 {
            return bad("data.toy.val_fraction", "train and val fractions exceed 1");
        }
        if self.optim.lr <= 0.0 {
            return bad("optim.lr", "must be positive");
        }
        if self.optim.steps == 0 {
            return bad("optim.steps", "must be at least 1");
        }
        if self.eval.batch_size == 0 {
            return bad("eval.batch_size", "must be at least 1");
        }
        if self.ablation.variants.is_empty() {
            return bad("ablation.variants", "list at least one variant");
        }
        self.optim.validate()?;
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            nc: self.data.nc,
            max_range_mm: self.data.sparsify.max_range_mm,
            backbone: self.backbone.clone(),
            semantic: self.semantic.clone(),
            depth: self.depth.clone(),
            joint: self.joint.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optim: self.optim.clone(),
            loss: self.loss.clone(),
            resample_sparse: self.training.resample_sparse,
            val_every: self.training.val_every,
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            model: self.model_config(),
            train: self.train_config(),
            eval: self.eval.clone(),
            seed: self.seed,
        }
    }

    /// Dataset directory: the configured root, else the environment
    /// variable, else `<out_dir>/data`.
    pub fn data_root(&self) -> PathBuf {
        self.data
            .root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| self.out_dir.join("data"))
    }

    /// The small preset used for tests and quick runs.
    pub fn micro() -> Self {
        let m = ModelConfig::micro(4);
        Self {
            backbone: m.backbone,
            semantic: m.semantic,
            depth: m.depth,
            joint: m.joint,
            ..Self::default()
        }
    }
}

pub const DATA_ROOT_ENV: &str = "SEMSEGDEPTH_DATA_ROOT";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_nested_key_is_named() {
        let err = RunConfig::parse("[optim]\nlrr = 0.1\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "optim.lrr"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_top_level_key_is_named() {
        match RunConfig::parse("sed = 3\n").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "sed"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_errors_carry_the_path() {
        match RunConfig::parse("[data.sparsify]\nn_points = \"many\"\n").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "data.sparsify.n_points"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn materialized_form_round_trips() {
        let mut cfg = RunConfig::micro();
        cfg.seed = 11;
        cfg.data.root = Some("somewhere".into());
        cfg.loss.ignore_id = Some(0);
        let text = cfg.to_toml();
        assert!(text.contains("momentum"));
        assert!(text.contains("stage_block_counts"));
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn validation_names_the_key() {
        match RunConfig::parse("[optim]\nmomentum = 1.5\n").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "optim.momentum"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn toy_counts_cover_every_sample() {
        for n in 0..40 {
            let t = ToyConfig { n_samples: n, ..ToyConfig::default() };
            let (a, b, c) = t.counts();
            assert_eq!(a + b + c, n);
        }
    }
}
