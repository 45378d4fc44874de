//! Training objectives, both as plain functions on values and as
//! differentiable tape operations.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `x - logsumexp(x)`, shifted by the maximum for stability.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

fn check_labels(labels: &[u32], nc: usize, ignore: Option<u32>) -> Result<()> {
    match labels.iter().find(|&&l| Some(l) != ignore && l as usize >= nc) {
        Some(&id) => Err(Error::InvalidClassId { id, nc }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood over non-ignored pixels; 0 when every pixel
/// is ignored. `logits` is `[N, nc, H, W]`, `labels` holds `N * H * W` ids.
pub fn semantic_loss(logits: &Tensor, labels: &[u32], ignore: Option<u32>) -> Result<f64> {
    let (n, nc, h, w) = logits.dims4()?;
    let plane = h * w;
    if labels.len() != n * plane {
        return Err(Error::ShapeMismatch(format!("{} labels for {n}x{h}x{w} logits", labels.len())));
    }
    check_labels(labels, nc, ignore)?;
    let mut total = 0.0;
    let mut count = 0usize;
    let mut column = vec![0.0; nc];
    for b in 0..n {
        for p in 0..plane {
            let label = labels[b * plane + p];
            if Some(label) == ignore {
                continue;
            }
            for (k, v) in column.iter_mut().enumerate() {
                *v = logits.data()[(b * nc + k) * plane + p];
            }
            total -= log_softmax(&column)[label as usize];
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Validity mask `gt > 0` (0 is the missing-depth sentinel), optionally
/// capped at `max_range_mm`.
pub fn depth_mask(gt: &[f64], max_range_mm: Option<f64>) -> Vec<bool> {
    gt.iter()
        .map(|&g| g > 0.0 && max_range_mm.is_none_or(|r| g <= r))
        .collect()
}

/// Mean squared error over masked pixels, in mm².
pub fn depth_loss(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    assert_eq!(pred.len(), gt.len(), "prediction and ground truth differ in size");
    assert_eq!(mask.len(), gt.len(), "mask and ground truth differ in size");
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), &m) in pred.iter().zip(gt).zip(mask) {
        if m {
            sum += (p - g) * (p - g);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Weights of the semantic and depth terms in the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub semantic: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            semantic: 1.0,
            depth: 1.0,
        }
    }
}

pub fn joint_loss(semantic: f64, depth: f64) -> f64 {
    semantic + depth
}

/// Loss components of one step. Absent terms are `None`; `joint` is the
/// weighted sum of the present ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub semantic: Option<f64>,
    pub depth: Option<f64>,
    pub joint: f64,
}

impl LossValue {
    pub fn new(semantic: Option<f64>, depth: Option<f64>, weights: LossWeights) -> Self {
        Self {
            semantic,
            depth,
            joint: joint_loss(
                weights.semantic * semantic.unwrap_or(0.0),
                weights.depth * depth.unwrap_or(0.0),
            ),
        }
    }
}

/// Differentiable [`semantic_loss`]; the gradient is
/// `(softmax - one_hot) / count` at every counted pixel.
pub fn cross_entropy<'t>(logits: Var<'t>, labels: Rc<Vec<u32>>, ignore: Option<u32>) -> Result<Var<'t>> {
    let lv = logits.value();
    let loss = semantic_loss(&lv, &labels, ignore)?;
    let (n, nc, h, w) = lv.dims4()?;
    let counted = labels.iter().filter(|&&l| Some(l) != ignore).count();
    let shape = lv.shape().to_vec();
    Ok(logits.tape().op(Tensor::scalar(loss), &[logits], move |g, _| {
        let plane = h * w;
        let mut dx = vec![0.0; n * nc * plane];
        if counted > 0 {
            let scale = g.item() / counted as f64;
            let mut column = vec![0.0; nc];
            for b in 0..n {
                for p in 0..plane {
                    let label = labels[b * plane + p];
                    if Some(label) == ignore {
                        continue;
                    }
                    for (k, v) in column.iter_mut().enumerate() {
                        *v = lv.data()[(b * nc + k) * plane + p];
                    }
                    for (k, ls) in log_softmax(&column).into_iter().enumerate() {
                        let one_hot = if k == label as usize { 1.0 } else { 0.0 };
                        dx[(b * nc + k) * plane + p] = scale * (ls.exp() - one_hot);
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    }))
}

/// Differentiable [`depth_loss`] for a `[N, 1, H, W]` prediction.
pub fn masked_mse<'t>(pred: Var<'t>, gt: Rc<Vec<f64>>, mask: Rc<Vec<bool>>) -> Result<Var<'t>> {
    let pv = pred.value();
    if pv.numel() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} depth targets for {:?}", gt.len(), pv.shape())));
    }
    let loss = depth_loss(pv.data(), &gt, &mask)?;
    let n = mask.iter().filter(|&&m| m).count() as f64;
    let shape = pv.shape().to_vec();
    Ok(pred.tape().op(Tensor::scalar(loss), &[pred], move |g, _| {
        let scale = 2.0 * g.item() / n;
        let dx = pv
            .data()
            .iter()
            .zip(gt.iter())
            .zip(mask.iter())
            .map(|((p, t), &m)| if m { scale * (p - t) } else { 0.0 })
            .collect();
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    }))
}
