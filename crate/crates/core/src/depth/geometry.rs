use crate::data::{DepthMap, Intrinsics};
use crate::error::{Error, Result};

/// Camera-frame points (meters) lifted from the nonzero pixels of a sparse
/// depth map, in row-major pixel order.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Vec<[f64; 3]>,
    /// Row-major index `v * W + u` of each point's source pixel.
    pub pixel_index: Vec<usize>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn unproject(sparse: &DepthMap, intr: &Intrinsics) -> Result<PointSet> {
    let w = sparse.width();
    let mut points = Vec::new();
    let mut pixel_index = Vec::new();
    for (i, &d) in sparse.data().iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let (v, u) = ((i / w) as f64, (i % w) as f64);
        let z = d / 1000.0;
        points.push([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z]);
        pixel_index.push(i);
    }
    if points.is_empty() {
        return Err(Error::EmptySparseDepth);
    }
    Ok(PointSet { points, pixel_index })
}
