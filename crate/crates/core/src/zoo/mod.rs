//! The nine model variants: a declarative table plus one model type whose
//! components are switched on per variant.

mod batch;

pub use batch::Batch;

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Tape, Var};
use crate::backbone::{Backbone, BackboneConfig};
use crate::data::{DepthMap, ImageSample, LabelMap, MAX_RANGE_MM};
use crate::depth::{DepthConfig, DepthHead};
use crate::error::{Error, Result};
use crate::joint::{JointConfig, JointHead};
use crate::losses::{self, LossValue, LossWeights};
use crate::nn::{Init, InitRng};
use crate::params::{Bound, ParamStore};
use crate::semantic::{SemanticConfig, SemanticHead};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantName {
    #[serde(rename = "SemSegNet_b")]
    SemSegNetB,
    #[serde(rename = "DepthNet_b")]
    DepthNetB,
    #[serde(rename = "SemNet_depth_gt")]
    SemNetDepthGt,
    #[serde(rename = "SemNet_depth_dense_gt")]
    SemNetDepthDenseGt,
    #[serde(rename = "DepthNet_semantic_gt")]
    DepthNetSemanticGt,
    #[serde(rename = "SemSeg_Depth_a")]
    SemSegDepthA,
    #[serde(rename = "SemSeg_Depth_b")]
    SemSegDepthB,
    #[serde(rename = "SemSeg_Depth_c")]
    SemSegDepthC,
    #[serde(rename = "SemSegDepth")]
    SemSegDepth,
}

impl VariantName {
    pub fn as_str(self) -> &'static str {
        self.spec().label
    }

    pub fn spec(self) -> &'static VariantSpec {
        VARIANTS.iter().find(|v| v.name == self).expect("every name has a spec")
    }

    pub fn all() -> impl Iterator<Item = VariantName> {
        VARIANTS.iter().map(|v| v.name)
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VARIANTS
            .iter()
            .find(|v| v.label == s)
            .map(|v| v.name)
            .ok_or_else(|| Error::UnknownVariant(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Semantic,
    Depth,
}

/// Ground truth a variant consumes as a network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtInput {
    SparseDepthGt,
    DenseDepthGt,
    SemanticGt,
}

/// `Separate` optimizes the semantic and depth terms each through its own
/// path: the semantic loss does not reach the depth predictor. `Joint`
/// backpropagates the summed loss through every path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    SemanticOnly,
    DepthOnly,
    Separate,
    Joint,
}

/// Where the depth predictor takes its semantic guide from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthGuide {
    None,
    GroundTruth,
    /// A second semantic head on the shared backbone.
    AuxiliaryHead,
    /// The same semantic head that feeds the joint branch.
    SharedHead,
}

/// What the joint branch refines the semantic logits with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointDepth {
    None,
    SparseGt,
    DenseGt,
    Predicted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSpec {
    pub name: VariantName,
    pub label: &'static str,
    pub outputs: &'static [Output],
    pub gt_inputs: &'static [GtInput],
    pub loss_mode: LossMode,
    pub shares_semantic_branch: bool,
    pub depth_guide: DepthGuide,
    pub joint_depth: JointDepth,
}

impl VariantSpec {
    pub fn has_semantic(&self) -> bool {
        self.outputs.contains(&Output::Semantic)
    }

    pub fn has_depth(&self) -> bool {
        self.outputs.contains(&Output::Depth)
    }
}

const BOTH: &[Output] = &[Output::Semantic, Output::Depth];

/// One row per variant, in ablation-table order.
pub static VARIANTS: [VariantSpec; 9] = [
    VariantSpec {
        name: VariantName::SemSegNetB,
        label: "SemSegNet_b",
        outputs: &[Output::Semantic],
        gt_inputs: &[],
        loss_mode: LossMode::SemanticOnly,
        shares_semantic_branch: false,
        depth_guide: DepthGuide::None,
        joint_depth: JointDepth::None,
    },
    VariantSpec {
        name: VariantName::DepthNetB,
        label: "DepthNet_b",
        outputs: &[Output::Depth],
        gt_inputs: &[],
        loss_mode: LossMode::DepthOnly,
        shares_semantic_branch: false,
        depth_guide: DepthGuide::None,
        joint_depth: JointDepth::None,
    },
    VariantSpec {
        name: VariantName::SemNetDepthGt,
        label: "SemNet_depth_gt",
        outputs: &[Output::Semantic],
        gt_inputs: &[GtInput::SparseDepthGt],
        loss_mode: LossMode::SemanticOnly,
        shares_semantic_branch: false,
        depth_guide: DepthGuide::None,
        joint_depth: JointDepth::SparseGt,
    },
    VariantSpec {
        name: VariantName::SemNetDepthDenseGt,
        label: "SemNet_depth_dense_gt",
        outputs: &[Output::Semantic],
        gt_inputs: &[GtInput::DenseDepthGt],
        loss_mode: LossMode::SemanticOnly,
        shares_semantic_branch: false,
        depth_guide: DepthGuide::None,
        joint_depth: JointDepth::DenseGt,
    },
    VariantSpec {
        name: VariantName::DepthNetSemanticGt,
        label: "DepthNet_semantic_gt",
        outputs: &[Output::Depth],
        gt_inputs: &[GtInput::SemanticGt],
        loss_mode: LossMode::DepthOnly,
        shares_semantic_branch: false,
        depth_guide: DepthGuide::GroundTruth,
        joint_depth: JointDepth::None,
    },
    VariantSpec {
        name: VariantName::SemSegDepthA,
        label: "SemSeg_Depth_a",
        outputs: BOTH,
        gt_inputs: &[],
        loss_mode: LossMode::Separate,
        shares_semantic_branch: false,
        depth_guide: DepthGuide::None,
        joint_depth: JointDepth::Predicted,
    },
    VariantSpec {
        name: VariantName::SemSegDepthB,
        label: "SemSeg_Depth_b",
        outputs: BOTH,
        gt_inputs: &[],
        loss_mode: LossMode::Separate,
        shares_semantic_branch: false,
        depth_guide: DepthGuide::AuxiliaryHead,
        joint_depth: JointDepth::Predicted,
    },
    VariantSpec {
        name: VariantName::SemSegDepthC,
        label: "SemSeg_Depth_c",
        outputs: BOTH,
        gt_inputs: &[],
        loss_mode: LossMode::Joint,
        shares_semantic_branch: false,
        depth_guide: DepthGuide::AuxiliaryHead,
        joint_depth: JointDepth::Predicted,
    },
    VariantSpec {
        name: VariantName::SemSegDepth,
        label: "SemSegDepth",
        outputs: BOTH,
        gt_inputs: &[],
        loss_mode: LossMode::Joint,
        shares_semantic_branch: true,
        depth_guide: DepthGuide::SharedHead,
        joint_depth: JointDepth::Predicted,
    },
];

pub fn variant_spec(name: &str) -> Result<&'static VariantSpec> {
    Ok(name.parse::<VariantName>()?.spec())
}

/// Architecture hyperparameters shared by every variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub nc: usize,
    pub max_range_mm: f64,
    pub backbone: BackboneConfig,
    pub semantic: SemanticConfig,
    pub depth: DepthConfig,
    pub joint: JointConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            nc: 15,
            max_range_mm: MAX_RANGE_MM,
            backbone: BackboneConfig::default(),
            semantic: SemanticConfig::default(),
            depth: DepthConfig::default(),
            joint: JointConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Tiny widths everywhere, for tests and gradient checks.
    pub fn micro(nc: usize) -> Self {
        Self {
            nc,
            max_range_mm: MAX_RANGE_MM,
            backbone: BackboneConfig::micro(),
            semantic: SemanticConfig {
                head_channels: 8,
                supervise_preliminary: false,
            },
            depth: DepthConfig {
                n_blocks: 1,
                knn_k: 4,
                kernel_mlp_widths: vec![8],
                channels_2d: 8,
                ..DepthConfig::default()
            },
            joint: JointConfig {
                channels: 8,
                stop_depth_gradient: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc < 2 {
            return Err(Error::Config {
                key: "model.nc".into(),
                message: "need at least two classes".into(),
            });
        }
        if !(self.max_range_mm > 0.0) {
            return Err(Error::Config {
                key: "model.max_range_mm".into(),
                message: "must be positive".into(),
            });
        }
        self.backbone.validate()?;
        self.depth.validate()
    }
}

/// Which depth map supervises the depth output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSupervision {
    /// The sparse input points.
    #[default]
    Sparse,
    /// Every valid pixel of the dense map.
    Dense,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub ignore_id: Option<u32>,
    pub depth_supervision: DepthSupervision,
}

/// Network outputs on one batch. `preliminary` is the semantic head output
/// before the joint branch, when there is one.
#[derive(Clone, Copy, Debug)]
pub struct Outputs<'t> {
    pub semantic: Option<Var<'t>>,
    pub preliminary: Option<Var<'t>>,
    pub depth: Option<Var<'t>>,
}

/// Per-sample inference result.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub sample_id: String,
    pub labels: Option<LabelMap>,
    pub depth: Option<DepthMap>,
}

/// Parameter key prefixes: `backbone.`, `semantic.`, `semantic_aux.`,
/// `depth.`, `joint.`.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: &'static VariantSpec,
    pub cfg: ModelConfig,
    backbone: Option<Backbone>,
    semantic: Option<SemanticHead>,
    semantic_aux: Option<SemanticHead>,
    depth: Option<DepthHead>,
    joint: Option<JointHead>,
}

impl Model {
    pub fn new(spec: &'static VariantSpec, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let nc = cfg.nc;
        let fpn = cfg.backbone.fpn_channels;
        let needs_semantic = spec.has_semantic() || spec.depth_guide == DepthGuide::AuxiliaryHead;
        let guide_channels = match spec.depth_guide {
            DepthGuide::None => 0,
            _ => nc,
        };
        Ok(Self {
            spec,
            cfg: cfg.clone(),
            backbone: needs_semantic.then(|| Backbone::new("backbone", &cfg.backbone)),
            semantic: needs_semantic.then(|| SemanticHead::new("semantic", fpn, nc, &cfg.semantic)),
            semantic_aux: (spec.depth_guide == DepthGuide::AuxiliaryHead)
                .then(|| SemanticHead::new("semantic_aux", fpn, nc, &cfg.semantic)),
            depth: spec
                .has_depth()
                .then(|| DepthHead::new("depth", guide_channels, &cfg.depth)),
            joint: (spec.joint_depth != JointDepth::None)
                .then(|| JointHead::new("joint", nc, cfg.max_range_mm, &cfg.joint)),
        })
    }

    /// Seeded parameters. Components initialize in a fixed order (backbone,
    /// semantic, semantic_aux, depth, joint), so variants sharing a
    /// component with the same seed share its initial weights.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = InitRng::seed_from_u64(seed);
        if let Some(b) = &self.backbone {
            b.init(&mut store, &mut rng);
        }
        let mut component = |init: &dyn Fn(&mut ParamStore, &mut InitRng), salt: u64| {
            let mut rng = InitRng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            init(&mut store, &mut rng);
        };
        if let Some(s) = &self.semantic {
            component(&|st, r| s.init(st, r), 1);
        }
        if let Some(s) = &self.semantic_aux {
            component(&|st, r| s.init(st, r), 2);
        }
        if let Some(d) = &self.depth {
            component(&|st, r| d.init(st, r), 3);
        }
        if let Some(j) = &self.joint {
            component(&|st, r| j.init(st, r), 4);
        }
        store
    }

    /// Checks that `params` holds exactly this model's keys and shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let reference = self.init_params(0);
        for (k, t) in reference.iter() {
            match params.get(k) {
                None => return Err(Error::MissingParam(k.to_owned())),
                Some(p) if p.shape() != t.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "`{k}` has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = params.keys().find(|k| reference.get(k).is_none()) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    fn require_inputs(&self, batch: &Batch) -> Result<()> {
        for gt in self.spec.gt_inputs {
            let (present, name) = match gt {
                GtInput::SparseDepthGt => (batch.sparse.is_some(), "sparse_depth_gt"),
                GtInput::DenseDepthGt => (batch.dense.is_some(), "dense_depth_gt"),
                GtInput::SemanticGt => (batch.labels.is_some(), "semantic_gt"),
            };
            if !present {
                return Err(Error::MissingInput(name));
            }
        }
        if self.depth.is_some() && batch.sparse.is_none() {
            return Err(Error::MissingInput("sparse_depth"));
        }
        Ok(())
    }

    /// Semantic logits at input resolution from a head on the shared
    /// backbone; the input is reflect-padded to a multiple of 32 and the
    /// logits are cropped back.
    fn semantic_logits<'t>(&self, p: &Bound<'t>, rgb: Var<'t>, batch: &Batch) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let (h, w) = (batch.height, batch.width);
        let (ph, pw) = (h.div_ceil(32) * 32, w.div_ceil(32) * 32);
        let padded = if (ph, pw) == (h, w) {
            rgb
        } else {
            autodiff::reflect_pad(rgb, ph - h, pw - w)
        };
        let backbone = self.backbone.as_ref().expect("semantic variants build a backbone");
        let pyramid = backbone.forward(p, padded)?;
        let crop = |x: Var<'t>| if (ph, pw) == (h, w) { x } else { autodiff::crop(x, 0, 0, h, w) };
        let main = crop(self.semantic.as_ref().expect("semantic head").forward(p, &pyramid));
        let aux = self.semantic_aux.as_ref().map(|head| crop(head.forward(p, &pyramid)));
        Ok((main, aux))
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, batch: &Batch) -> Result<Outputs<'t>> {
        self.require_inputs(batch)?;
        let tape = p.tape();
        let rgb = tape.constant_rc(batch.rgb.clone());

        let (prelim, aux) = match &self.backbone {
            Some(_) => {
                let (m, a) = self.semantic_logits(p, rgb, batch)?;
                (Some(m), a)
            }
            None => (None, None),
        };

        let depth = match &self.depth {
            Some(head) => {
                let sparse = tape.constant_rc(batch.sparse.clone().expect("checked"));
                let guide = match self.spec.depth_guide {
                    DepthGuide::None => None,
                    DepthGuide::GroundTruth => Some(tape.constant(batch.one_hot_labels(self.cfg.nc)?)),
                    DepthGuide::AuxiliaryHead => Some(head.semantic_guide(aux.expect("aux head"))),
                    DepthGuide::SharedHead => Some(head.semantic_guide(prelim.expect("semantic head"))),
                };
                let graph = batch.point_graph(self.cfg.depth.knn_k)?;
                Some(head.forward(p, rgb, sparse, guide, &graph)?)
            }
            None => None,
        };

        let semantic = match &self.joint {
            Some(joint) => {
                let d = match self.spec.joint_depth {
                    JointDepth::SparseGt => tape.constant_rc(batch.sparse.clone().expect("checked")),
                    JointDepth::DenseGt => tape.constant_rc(batch.dense.clone().expect("checked")),
                    JointDepth::Predicted => {
                        let d = depth.expect("depth head");
                        if self.spec.loss_mode == LossMode::Separate {
                            autodiff::stop_gradient(d)
                        } else {
                            d
                        }
                    }
                    JointDepth::None => unreachable!("joint head built without a depth source"),
                };
                Some(joint.forward(p, prelim.expect("semantic head"), d)?)
            }
            None => prelim,
        };

        Ok(Outputs {
            semantic,
            preliminary: if self.joint.is_some() { prelim } else { None },
            depth,
        })
    }

    /// Scalar training objective and its components.
    pub fn loss<'t>(&self, out: &Outputs<'t>, batch: &Batch, cfg: &LossConfig) -> Result<(Var<'t>, LossValue)> {
        let mut semantic_term: Option<Var<'t>> = None;
        if let Some(logits) = out.semantic {
            let labels = batch.labels.clone().ok_or(Error::MissingInput("semantic_gt"))?;
            let mut l = losses::cross_entropy(logits, labels.clone(), cfg.ignore_id)?;
            if self.cfg.semantic.supervise_preliminary {
                if let Some(pre) = out.preliminary {
                    l = l.add(losses::cross_entropy(pre, labels, cfg.ignore_id)?);
                }
            }
            semantic_term = Some(l);
        }
        let mut depth_term: Option<Var<'t>> = None;
        if let Some(pred) = out.depth {
            let target = match cfg.depth_supervision {
                DepthSupervision::Sparse => batch.sparse.as_ref().ok_or(Error::MissingInput("sparse_depth"))?,
                DepthSupervision::Dense => batch.dense.as_ref().ok_or(Error::MissingInput("dense_depth_gt"))?,
            };
            let mask = losses::depth_mask(target.data(), Some(self.cfg.max_range_mm));
            depth_term = Some(losses::masked_mse(pred, Rc::new(target.data().to_vec()), Rc::new(mask))?);
        }
        let value = LossValue::new(
            semantic_term.map(|v| v.value().item()),
            depth_term.map(|v| v.value().item()),
            cfg.weights,
        );
        let total = match (semantic_term, depth_term) {
            (Some(s), Some(d)) => s.scale(cfg.weights.semantic).add(d.scale(cfg.weights.depth)),
            (Some(s), None) => s.scale(cfg.weights.semantic),
            (None, Some(d)) => d.scale(cfg.weights.depth),
            (None, None) => unreachable!("every variant has an output"),
        };
        Ok((total, value))
    }

    /// Forward pass without gradient bookkeeping, converted to per-sample
    /// label and depth maps.
    pub fn predict(&self, params: &ParamStore, samples: &[ImageSample]) -> Result<Vec<Prediction>> {
        let batch = Batch::new(samples)?;
        let tape = Tape::inference();
        let bound = params.bind(&tape);
        let out = self.forward(&bound, &batch)?;
        let (h, w) = (batch.height, batch.width);
        let labels = out.semantic.map(|v| argmax_labels(&v.value()));
        let depth = out.depth.map(|v| v.value());
        Ok((0..batch.len())
            .map(|b| Prediction {
                sample_id: batch.ids[b].clone(),
                labels: labels.as_ref().map(|l| l[b].clone()),
                depth: depth.as_ref().map(|d| {
                    DepthMap::new(h, w, d.data()[b * h * w..(b + 1) * h * w].to_vec()).expect("map size")
                }),
            })
            .collect())
    }
}

/// Per-sample argmax over the class axis of `[N, nc, H, W]` logits; ties go
/// to the lowest class id.
pub fn argmax_labels(logits: &Tensor) -> Vec<LabelMap> {
    let (n, nc, h, w) = logits.nchw();
    let plane = h * w;
    (0..n)
        .map(|b| {
            LabelMap::from_fn(h, w, |r, c| {
                let p = r * w + c;
                let mut best = 0;
                for k in 1..nc {
                    if logits.data()[(b * nc + k) * plane + p] > logits.data()[(b * nc + best) * plane + p] {
                        best = k;
                    }
                }
                best as u32
            })
        })
        .collect()
}

/// Builds a variant by name with seeded initial parameters.
pub fn build_variant(name: &str, cfg: &ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
    let model = Model::new(variant_spec(name)?, cfg)?;
    let params = model.init_params(seed);
    Ok((model, params))
}
