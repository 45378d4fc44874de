//! Samples, the sparsification and cropping protocol, the procedural toy
//! scene generator, and the on-disk dataset layout.

mod io;
mod sparsify;
mod split;
mod toy;

pub use io::{
    load_dataset, load_vkitti2_sample, write_dataset, ClassEntry, ClassMap, Dataset, DatasetPaths,
    LoadedSample, VKITTI2_INTRINSICS,
};
pub use sparsify::{sparsify_depth, SparsifyConfig};
pub(crate) use sparsify::splitmix64;
pub use split::{split_dataset, DatasetSplit};
pub use toy::{generate_toy_dataset, generate_toy_scene, ToyScene};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default LiDAR range cut-off in millimeters.
pub const MAX_RANGE_MM: f64 = 50_000.0;

/// Row-major 2D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Per-pixel depth in millimeters; 0 marks a missing value.
pub type DepthMap = Grid<f64>;
/// Per-pixel class id.
pub type LabelMap = Grid<u32>;
/// Per-pixel RGB in `[0, 1]`.
pub type RgbImage = Grid<[f64; 3]>;

impl<T: Clone> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    /// Caller guarantees the window lies inside the grid.
    pub fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in top..top + height {
            data.extend_from_slice(&self.data[r * self.width + left..r * self.width + left + width]);
        }
        Self { height, width, data }
    }
}

impl DepthMap {
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&d| d != 0.0).count()
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Pixel `(u, v)` and depth in mm for a camera-frame point in meters.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
            p[2] * 1000.0,
        )
    }
}

/// One training or evaluation record.
///
/// Optional fields are absent rather than zero-filled: a sample loaded from
/// disk has no sparse depth until it is sparsified, and an inference-only
/// sample may carry no ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub sample_id: String,
    pub rgb: RgbImage,
    pub sparse_depth: Option<DepthMap>,
    pub dense_depth_gt: Option<DepthMap>,
    pub semantic_gt: Option<LabelMap>,
    pub intrinsics: Intrinsics,
}

impl ImageSample {
    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    /// Checks the sample invariants: shared extent, sparse values drawn from
    /// the dense map and within range, labels below `nc`.
    pub fn validate(&self, nc: usize, max_range_mm: f64) -> Result<()> {
        let dims = self.dims();
        let check = |name: &str, d: (usize, usize)| {
            if d != dims {
                Err(Error::ShapeMismatch(format!("{name} is {d:?}, rgb is {dims:?}")))
            } else {
                Ok(())
            }
        };
        if let Some(s) = &self.sparse_depth {
            check("sparse_depth", s.dims())?;
            for (i, &v) in s.data().iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                if !(v > 0.0 && v <= max_range_mm) {
                    return Err(Error::Dataset(format!("sparse value {v} mm at pixel {i} out of range")));
                }
                if let Some(d) = &self.dense_depth_gt {
                    if d.data()[i] != v {
                        return Err(Error::Dataset(format!(
                            "sparse value {v} at pixel {i} differs from dense {}",
                            d.data()[i]
                        )));
                    }
                }
            }
        }
        if let Some(d) = &self.dense_depth_gt {
            check("dense_depth_gt", d.dims())?;
        }
        if let Some(l) = &self.semantic_gt {
            check("semantic_gt", l.dims())?;
            if let Some(&id) = l.data().iter().find(|&&id| id as usize >= nc) {
                return Err(Error::InvalidClassId { id, nc });
            }
        }
        Ok(())
    }

    /// Replaces the sparse depth with a fresh draw from the dense map.
    pub fn sparsified(mut self, cfg: &SparsifyConfig) -> Result<Self> {
        let dense = self
            .dense_depth_gt
            .as_ref()
            .ok_or(Error::MissingInput("dense_depth_gt"))?;
        self.sparse_depth = Some(sparsify_depth(dense, cfg)?);
        Ok(self)
    }
}

/// Crops every array of `s` to the `h x w` window whose top-left corner is
/// `anchor = (row, col)`, shifting the principal point accordingly.
pub fn crop_sample(s: &ImageSample, h: usize, w: usize, anchor: (usize, usize)) -> Result<ImageSample> {
    let (src_h, src_w) = s.dims();
    let (row, col) = anchor;
    if h == 0 || w == 0 || row + h > src_h || col + w > src_w {
        return Err(Error::OutOfBounds {
            h,
            w,
            row,
            col,
            src_h,
            src_w,
        });
    }
    Ok(ImageSample {
        sample_id: s.sample_id.clone(),
        rgb: s.rgb.window(row, col, h, w),
        sparse_depth: s.sparse_depth.as_ref().map(|g| g.window(row, col, h, w)),
        dense_depth_gt: s.dense_depth_gt.as_ref().map(|g| g.window(row, col, h, w)),
        semantic_gt: s.semantic_gt.as_ref().map(|g| g.window(row, col, h, w)),
        intrinsics: Intrinsics {
            cx: s.intrinsics.cx - col as f64,
            cy: s.intrinsics.cy - row as f64,
            ..s.intrinsics
        },
    })
}
