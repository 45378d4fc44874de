//! Depth completion: two input conv stacks, a chain of 2D-3D fuse blocks and
//! a rectified refinement head.

mod geometry;
mod knn;

pub use geometry::{unproject, PointSet};
pub use knn::{knn, knn_brute_force, knn_grid, Neighbors, BRUTE_FORCE_LIMIT};

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init, InitRng, Linear};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// How preliminary semantic logits enter the depth head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticInput {
    #[default]
    Softmax,
    RawLogits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthConfig {
    pub n_blocks: usize,
    pub knn_k: usize,
    pub kernel_mlp_widths: Vec<usize>,
    pub channels_2d: usize,
    /// Depth (mm) mapped to 1.0 when normalizing the sparse input and
    /// scaling the rectified output.
    pub depth_scale_mm: f64,
    pub semantic_input: SemanticInput,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            n_blocks: 2,
            knn_k: 9,
            kernel_mlp_widths: vec![16],
            channels_2d: 32,
            depth_scale_mm: 10_000.0,
            semantic_input: SemanticInput::Softmax,
        }
    }
}

impl DepthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: format!("depth.{key}"),
                message: message.into(),
            })
        };
        if self.n_blocks == 0 {
            return bad("n_blocks", "must be at least 1");
        }
        if self.knn_k == 0 {
            return bad("knn_k", "must be at least 1");
        }
        if self.channels_2d < 2 {
            return bad("channels_2d", "must be at least 2");
        }
        if self.kernel_mlp_widths.contains(&0) {
            return bad("kernel_mlp_widths", "widths must be positive");
        }
        if !(self.depth_scale_mm > 0.0) {
            return bad("depth_scale_mm", "must be positive");
        }
        Ok(())
    }
}

/// Point sets of a whole batch with their neighbor graph.
#[derive(Clone, Debug)]
pub struct PointGraph {
    /// `(batch item, pixel)` of every point, batch-major.
    pub index: Rc<Vec<(usize, usize)>>,
    /// Flattened neighbor lists in global point numbering.
    pub neighbors: Rc<Vec<usize>>,
    pub bounds: Rc<Vec<usize>>,
    /// `p_j - p_i` for every (point, neighbor) pair, `[E, 3]`.
    pub offsets: Rc<Tensor>,
}

impl PointGraph {
    /// Neighbors are searched within each batch item separately.
    pub fn build(sets: &[PointSet], k: usize) -> Self {
        let mut index = Vec::new();
        let mut neighbors = Vec::new();
        let mut bounds = vec![0];
        let mut offsets = Vec::new();
        for (b, set) in sets.iter().enumerate() {
            let base = index.len();
            index.extend(set.pixel_index.iter().map(|&p| (b, p)));
            let nb = knn(&set.points, k);
            for i in 0..set.len() {
                let pi = set.points[i];
                for &j in nb.of(i) {
                    let pj = set.points[j];
                    neighbors.push(base + j);
                    offsets.extend_from_slice(&[pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]]);
                }
                bounds.push(neighbors.len());
            }
        }
        let edges = neighbors.len();
        Self {
            index: Rc::new(index),
            neighbors: Rc::new(neighbors),
            bounds: Rc::new(bounds),
            offsets: Rc::new(Tensor::new([edges, 3], offsets).expect("three offsets per edge")),
        }
    }

    pub fn n_points(&self) -> usize {
        self.index.len()
    }
}

/// Learned kernel over relative offsets, applied to neighbor features and
/// averaged: `out_i = mean_j MLP(p_j - p_i) * f_j`.
#[derive(Clone, Debug)]
pub struct ContinuousConv {
    layers: Vec<Linear>,
}

impl ContinuousConv {
    pub fn new(key: &str, channels: usize, hidden: &[usize]) -> Self {
        let mut widths = vec![3];
        widths.extend_from_slice(hidden);
        widths.push(channels);
        Self {
            layers: widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::new(format!("{key}.mlp{i}"), w[0], w[1]))
                .collect(),
        }
    }

    /// `feats` is `[K, C]` in the graph's point order.
    pub fn forward<'t>(&self, p: &Bound<'t>, feats: Var<'t>, graph: &PointGraph) -> Var<'t> {
        let tape = feats.tape();
        let mut kernel = tape.constant_rc(graph.offsets.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            kernel = layer.forward(p, kernel);
            if i + 1 < self.layers.len() {
                kernel = kernel.relu();
            }
        }
        let gathered = autodiff::index_rows(feats, graph.neighbors.clone());
        autodiff::segment_mean(kernel.mul(gathered), graph.bounds.clone())
    }
}

impl Init for ContinuousConv {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.layers.iter().for_each(|l| l.init(store, rng));
    }
}

/// Two 3x3 convolutions in parallel with gather, continuous convolution and
/// scatter over the sparse points; both branches are added to the input.
#[derive(Clone, Debug)]
pub struct FuseBlock {
    conv_a: Conv2d,
    conv_b: Conv2d,
    pub cconv: ContinuousConv,
}

impl FuseBlock {
    pub fn new(key: &str, channels: usize, mlp_widths: &[usize]) -> Self {
        Self {
            conv_a: Conv2d::new(format!("{key}.conv_a"), channels, channels, 3),
            conv_b: Conv2d::new(format!("{key}.conv_b"), channels, channels, 3),
            cconv: ContinuousConv::new(&format!("{key}.cconv"), channels, mlp_widths),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, graph: &PointGraph) -> Var<'t> {
        let two_d = self.conv_b.forward(p, self.conv_a.forward(p, x).relu());
        let s = x.shape();
        let at_points = autodiff::gather_points(x, graph.index.clone());
        let three_d = autodiff::scatter_points(
            self.cconv.forward(p, at_points, graph),
            graph.index.clone(),
            s[0],
            s[2],
            s[3],
        );
        x.add(two_d).add(three_d)
    }
}

impl Init for FuseBlock {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.conv_a.init(store, rng);
        self.conv_b.init(store, rng);
        self.cconv.init(store, rng);
    }
}

#[derive(Clone, Debug)]
struct ConvStack([Conv2d; 2]);

impl ConvStack {
    fn new(key: &str, input: usize, output: usize) -> Self {
        Self([
            Conv2d::new(format!("{key}.conv0"), input, output, 3),
            Conv2d::new(format!("{key}.conv1"), output, output, 3),
        ])
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        self.0[1].forward(p, self.0[0].forward(p, x).relu()).relu()
    }
}

impl Init for ConvStack {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.0.iter().for_each(|c| c.init(store, rng));
    }
}

/// Dense depth from RGB, sparse depth and an optional semantic guide.
#[derive(Clone, Debug)]
pub struct DepthHead {
    pub cfg: DepthConfig,
    /// Channels of the semantic guide, 0 when there is none.
    pub semantic_channels: usize,
    guided: ConvStack,
    sparse_only: ConvStack,
    pub blocks: Vec<FuseBlock>,
    refine: [Conv2d; 2],
}

impl DepthHead {
    pub fn new(prefix: &str, semantic_channels: usize, cfg: &DepthConfig) -> Self {
        let c = cfg.channels_2d;
        let half = c.div_ceil(2);
        Self {
            cfg: cfg.clone(),
            semantic_channels,
            guided: ConvStack::new(&format!("{prefix}.guided"), 1 + 3 + semantic_channels, half),
            sparse_only: ConvStack::new(&format!("{prefix}.sparse"), 1, c - half),
            blocks: (0..cfg.n_blocks)
                .map(|i| FuseBlock::new(&format!("{prefix}.fuse{i}"), c, &cfg.kernel_mlp_widths))
                .collect(),
            refine: [
                Conv2d::new(format!("{prefix}.refine0"), c, c, 3),
                Conv2d::new(format!("{prefix}.refine1"), c, 1, 3),
            ],
        }
    }

    /// Converts preliminary logits into the guide the head was built for.
    pub fn semantic_guide<'t>(&self, logits: Var<'t>) -> Var<'t> {
        match self.cfg.semantic_input {
            SemanticInput::Softmax => autodiff::softmax_channels(logits),
            SemanticInput::RawLogits => logits,
        }
    }

    /// `rgb` is `[N, 3, H, W]`, `sparse_mm` is `[N, 1, H, W]` with 0 at holes,
    /// `guide` is `[N, semantic_channels, H, W]` when present. Returns depth
    /// in millimeters, `[N, 1, H, W]`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        rgb: Var<'t>,
        sparse_mm: Var<'t>,
        guide: Option<Var<'t>>,
        graph: &PointGraph,
    ) -> Result<Var<'t>> {
        let got = guide.map_or(0, |g| g.shape()[1]);
        if got != self.semantic_channels {
            return Err(Error::ShapeMismatch(format!(
                "depth head expects {} semantic channels, got {got}",
                self.semantic_channels
            )));
        }
        let sparse = sparse_mm.scale(1.0 / self.cfg.depth_scale_mm);
        let mut a_in = vec![sparse, rgb];
        a_in.extend(guide);
        let a = self.guided.forward(p, autodiff::concat_channels(&a_in));
        let b = self.sparse_only.forward(p, sparse);
        let mut x = autodiff::concat_channels(&[a, b]);
        for block in &self.blocks {
            x = block.forward(p, x, graph);
        }
        let y = self.refine[1].forward(p, self.refine[0].forward(p, x).relu());
        Ok(y.softplus().scale(self.cfg.depth_scale_mm))
    }
}

impl Init for DepthHead {
    fn init(&self, store: &mut ParamStore, rng: &mut InitRng) {
        self.guided.init(store, rng);
        self.sparse_only.init(store, rng);
        self.blocks.iter().for_each(|b| b.init(store, rng));
        self.refine.iter().for_each(|c| c.init(store, rng));
    }
}

/// Stacks per-sample `H x W` maps into a constant `[N, 1, H, W]` tensor.
pub fn depth_batch<'t>(tape: &'t Tape, maps: &[&crate::data::DepthMap]) -> Var<'t> {
    let (h, w) = maps[0].dims();
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        assert_eq!(m.dims(), (h, w), "depth maps in a batch must share a size");
        data.extend_from_slice(m.data());
    }
    tape.constant(Tensor::new([maps.len(), 1, h, w], data).expect("batch size"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store(f: impl FnOnce(&mut ParamStore, &mut InitRng)) -> ParamStore {
        let mut s = ParamStore::new();
        f(&mut s, &mut InitRng::seed_from_u64(2));
        s
    }

    #[test]
    fn single_point_sees_only_itself() {
        let conv = ContinuousConv::new("c", 4, &[8]);
        let params = store(|s, r| conv.init(s, r));
        let graph = PointGraph::build(
            &[PointSet {
                points: vec![[0.3, -0.2, 4.0]],
                pixel_index: vec![0],
            }],
            5,
        );
        let tape = Tape::inference();
        let p = params.bind(&tape);
        let feats = tape.constant(Tensor::new([1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let out = conv.forward(&p, feats, &graph).value();
        let zero = tape.constant(Tensor::zeros([1, 3]));
        let mlp0 = conv.layers[1].forward(&p, conv.layers[0].forward(&p, zero).relu()).value();
        let want: Vec<f64> = mlp0.data().iter().zip([1.0, -2.0, 0.5, 3.0]).map(|(k, f)| k * f).collect();
        assert_eq!(out.data(), &want[..]);
    }

    #[test]
    fn translation_leaves_output_unchanged() {
        let conv = ContinuousConv::new("c", 3, &[6, 5]);
        let params = store(|s, r| conv.init(s, r));
        let pts: Vec<[f64; 3]> = (0..12).map(|i| [(i % 4) as f64 * 0.5, (i / 4) as f64 * 0.7, 5.0 + 0.1 * i as f64]).collect();
        let moved: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] + 0.25, p[1] - 1.5, p[2] + 2.0]).collect();
        let feats = Tensor::from_fn([12, 3], |i| (i as f64 * 0.37).cos());
        let run = |points: Vec<[f64; 3]>| {
            let graph = PointGraph::build(&[PointSet { points, pixel_index: (0..12).collect() }], 4);
            let tape = Tape::inference();
            let f = tape.constant(feats.clone());
            conv.forward(&params.bind(&tape), f, &graph).value().data().to_vec()
        };
        let (a, b) = (run(pts), run(moved));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_block_without_3d_kernel_is_2d_plus_residual() {
        let block = FuseBlock::new("f", 4, &[8]);
        let mut params = store(|s, r| block.init(s, r));
        for (k, t) in params.iter_mut() {
            if k.contains("cconv") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let graph = PointGraph::build(
            &[PointSet {
                points: vec![[0.0, 0.0, 1.0], [0.1, 0.0, 1.0], [0.0, 0.2, 1.5]],
                pixel_index: vec![0, 7, 20],
            }],
            2,
        );
        let tape = Tape::inference();
        let p = params.bind(&tape);
        let x = tape.constant(Tensor::from_fn([1, 4, 5, 5], |i| (i as f64).sin()));
        let y = block.forward(&p, x, &graph).value();
        let want = x.add(block.conv_b.forward(&p, block.conv_a.forward(&p, x).relu())).value();
        assert_eq!(y.data(), want.data());
    }

    #[test]
    fn head_output_is_nonnegative_and_sized() {
        let cfg = DepthConfig {
            channels_2d: 6,
            ..DepthConfig::default()
        };
        let head = DepthHead::new("depth", 4, &cfg);
        let params = store(|s, r| head.init(s, r));
        let sparse = crate::data::DepthMap::from_fn(16, 16, |r, c| if (r * 16 + c) % 11 == 0 { 3000.0 + 10.0 * c as f64 } else { 0.0 });
        let k = crate::data::Intrinsics { fx: 16.0, fy: 16.0, cx: 8.0, cy: 8.0 };
        let graph = PointGraph::build(&[unproject(&sparse, &k).unwrap()], cfg.knn_k);
        let tape = Tape::inference();
        let p = params.bind(&tape);
        let rgb = tape.constant(Tensor::full([1, 3, 16, 16], 0.5));
        let guide = head.semantic_guide(tape.constant(Tensor::from_fn([1, 4, 16, 16], |i| (i % 7) as f64)));
        let d = head.forward(&p, rgb, depth_batch(&tape, &[&sparse]), Some(guide), &graph).unwrap().value();
        assert_eq!(d.shape(), &[1, 1, 16, 16]);
        assert!(d.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert!(head.forward(&p, rgb, depth_batch(&tape, &[&sparse]), None, &graph).is_err());
    }
}
