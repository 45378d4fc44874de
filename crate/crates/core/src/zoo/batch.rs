use std::cell::RefCell;
use std::rc::Rc;

use crate::data::{ImageSample, Intrinsics};
use crate::depth::{unproject, PointGraph, PointSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples of equal size stacked into NCHW tensors. Optional fields are
/// present only when every sample carries them.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub rgb: Rc<Tensor>,
    /// `[N, 1, H, W]` millimeters, 0 at holes.
    pub sparse: Option<Rc<Tensor>>,
    pub dense: Option<Rc<Tensor>>,
    /// `N * H * W` class ids.
    pub labels: Option<Rc<Vec<u32>>>,
    pub intrinsics: Vec<Intrinsics>,
    point_sets: Option<Vec<Option<PointSet>>>,
    graph_cache: RefCell<Option<(usize, PointGraph)>>,
}

fn stack(maps: Option<Vec<&[f64]>>, n: usize, h: usize, w: usize) -> Option<Rc<Tensor>> {
    maps.map(|maps| {
        let data = maps.concat();
        Rc::new(Tensor::new([n, 1, h, w], data).expect("map sizes checked"))
    })
}

impl Batch {
    pub fn new(samples: &[ImageSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptySplit)?;
        let (h, w) = first.dims();
        for s in samples {
            let dims = s.dims();
            let sizes = [
                s.sparse_depth.as_ref().map(|m| m.dims()),
                s.dense_depth_gt.as_ref().map(|m| m.dims()),
                s.semantic_gt.as_ref().map(|m| m.dims()),
            ];
            if dims != (h, w) || sizes.iter().flatten().any(|&d| d != (h, w)) {
                return Err(Error::ShapeMismatch(format!(
                    "sample `{}` is {dims:?}, batch is {:?}",
                    s.sample_id,
                    (h, w)
                )));
            }
        }
        let n = samples.len();
        let plane = h * w;
        let mut rgb = vec![0.0; n * 3 * plane];
        for (b, s) in samples.iter().enumerate() {
            for (p, px) in s.rgb.data().iter().enumerate() {
                for (c, v) in px.iter().enumerate() {
                    rgb[(b * 3 + c) * plane + p] = *v;
                }
            }
        }
        let sparse_maps: Option<Vec<&[f64]>> = samples.iter().map(|s| s.sparse_depth.as_ref().map(|m| m.data())).collect();
        let point_sets = sparse_maps.as_ref().map(|_| {
            samples
                .iter()
                .map(|s| unproject(s.sparse_depth.as_ref().expect("checked"), &s.intrinsics).ok())
                .collect()
        });
        Ok(Self {
            ids: samples.iter().map(|s| s.sample_id.clone()).collect(),
            height: h,
            width: w,
            rgb: Rc::new(Tensor::new([n, 3, h, w], rgb).expect("rgb size")),
            sparse: stack(sparse_maps, n, h, w),
            dense: stack(
                samples.iter().map(|s| s.dense_depth_gt.as_ref().map(|m| m.data())).collect(),
                n,
                h,
                w,
            ),
            labels: samples
                .iter()
                .map(|s| s.semantic_gt.as_ref().map(|m| m.data().to_vec()))
                .collect::<Option<Vec<_>>>()
                .map(|v| Rc::new(v.concat())),
            intrinsics: samples.iter().map(|s| s.intrinsics).collect(),
            point_sets,
            graph_cache: RefCell::new(None),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Neighbor graph over the unprojected sparse points of every sample.
    pub fn point_graph(&self, k: usize) -> Result<PointGraph> {
        if let Some((cached_k, g)) = &*self.graph_cache.borrow() {
            if *cached_k == k {
                return Ok(g.clone());
            }
        }
        let sets = self.point_sets.as_ref().ok_or(Error::MissingInput("sparse_depth"))?;
        let sets: Vec<PointSet> = sets.iter().cloned().collect::<Option<_>>().ok_or(Error::EmptySparseDepth)?;
        let graph = PointGraph::build(&sets, k);
        *self.graph_cache.borrow_mut() = Some((k, graph.clone()));
        Ok(graph)
    }

    /// Ground-truth labels as `[N, nc, H, W]` one-hot planes; ids outside
    /// `0..nc` leave every channel at 0.
    pub fn one_hot_labels(&self, nc: usize) -> Result<Tensor> {
        let labels = self.labels.as_ref().ok_or(Error::MissingInput("semantic_gt"))?;
        let (n, plane) = (self.len(), self.height * self.width);
        let mut data = vec![0.0; n * nc * plane];
        for b in 0..n {
            for p in 0..plane {
                let l = labels[b * plane + p] as usize;
                if l < nc {
                    data[(b * nc + l) * plane + p] = 1.0;
                }
            }
        }
        Ok(Tensor::new([n, nc, self.height, self.width], data).expect("one-hot size"))
    }
}
