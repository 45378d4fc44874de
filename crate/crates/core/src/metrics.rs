//! Evaluation metrics: pooled confusion counts, mean IoU and depth RMSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::depth_loss;

/// Per-class true-positive, false-positive and false-negative pixel counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(nc: usize) -> Self {
        Self {
            tp: vec![0; nc],
            fp: vec![0; nc],
            fn_: vec![0; nc],
        }
    }

    pub fn nc(&self) -> usize {
        self.tp.len()
    }

    /// Adds one image; pixels whose ground truth equals `ignore` are skipped.
    pub fn add(&mut self, pred: &[u32], gt: &[u32], ignore: Option<u32>) -> Result<()> {
        assert_eq!(pred.len(), gt.len(), "prediction and ground truth differ in size");
        let nc = self.nc();
        for (&p, &g) in pred.iter().zip(gt) {
            if Some(g) == ignore {
                continue;
            }
            for id in [p, g] {
                if id as usize >= nc {
                    return Err(Error::InvalidClassId { id, nc });
                }
            }
            if p == g {
                self.tp[g as usize] += 1;
            } else {
                self.fp[p as usize] += 1;
                self.fn_[g as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in [(&mut self.tp, &other.tp), (&mut self.fp, &other.fp), (&mut self.fn_, &other.fn_)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// `TP / (TP + FP + FN)` per class; `None` where the union is empty.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.nc())
            .map(|l| {
                let union = self.tp[l] + self.fp[l] + self.fn_[l];
                (union > 0).then(|| self.tp[l] as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes with a nonempty union.
    pub fn miou(&self) -> Result<f64> {
        let present: Vec<f64> = self.iou().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

pub fn miou(pred: &[u32], gt: &[u32], nc: usize, ignore: Option<u32>) -> Result<f64> {
    let mut c = ConfusionCounts::new(nc);
    c.add(pred, gt, ignore)?;
    c.miou()
}

pub fn rmse(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    depth_loss(pred, gt, mask).map(f64::sqrt)
}

/// Running squared-error sum for RMSE pooled over many images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SquaredError {
    pub sum: f64,
    pub count: u64,
}

impl SquaredError {
    pub fn add(&mut self, pred: &[f64], gt: &[f64], mask: &[bool]) {
        for ((p, g), &m) in pred.iter().zip(gt).zip(mask) {
            if m {
                self.sum += (p - g) * (p - g);
                self.count += 1;
            }
        }
    }

    pub fn rmse(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok((self.sum / self.count as f64).sqrt())
    }
}
