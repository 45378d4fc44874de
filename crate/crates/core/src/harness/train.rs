use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{OptimConfig, Sgd};
use crate::autodiff::Tape;
use crate::data::{splitmix64, ImageSample, SparsifyConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::zoo::{Batch, LossConfig, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub loss: LossConfig,
    /// Draw a fresh sparse subset of every training sample each epoch
    /// instead of keeping the stored one.
    pub resample_sparse: bool,
    /// Validation period in steps; 0 validates only after the last step.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            resample_sparse: false,
            val_every: 0,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub semantic_loss: Option<f64>,
    pub depth_loss: Option<f64>,
    pub joint_loss: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

pub fn write_log(records: &[LogRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: ParamStore,
    /// Parameters with the lowest validation loss (the last ones when there
    /// is no validation data).
    pub best: ParamStore,
    pub best_step: usize,
    pub best_val_loss: Option<f64>,
    pub log: Vec<LogRecord>,
}

/// Mean joint loss over `samples` in batches, without recording gradients.
pub fn validation_loss(model: &Model, params: &ParamStore, samples: &[ImageSample], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(cfg.optim.batch_size) {
        let batch = Batch::new(chunk)?;
        let tape = Tape::inference();
        let bound = params.bind(&tape);
        let out = model.forward(&bound, &batch)?;
        let (_, value) = model.loss(&out, &batch, &cfg.loss)?;
        total += value.joint * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Sample order for `epoch`: a seeded shuffle of `0..n`.
fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(epoch))));
    order
}

/// Minibatch SGD for `cfg.optim.steps` steps. Epochs visit every training
/// sample once in a seeded order; the last batch of an epoch may be short.
pub fn train(
    model: &Model,
    init: ParamStore,
    train_set: &[ImageSample],
    val_set: &[ImageSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.optim.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut params = init;
    let mut best = params.clone();
    let mut best_step = 0;
    let mut best_val: Option<f64> = None;
    let mut sgd = Sgd::new();
    let mut log = Vec::with_capacity(cfg.optim.steps);
    let bs = cfg.optim.batch_size.min(train_set.len());
    let per_epoch = train_set.len().div_ceil(bs);
    let mut epoch_samples: Vec<ImageSample> = Vec::new();
    let mut order: Vec<usize> = Vec::new();

    for step in 0..cfg.optim.steps {
        let epoch = step / per_epoch;
        let slot = step % per_epoch;
        if slot == 0 {
            order = epoch_order(train_set.len(), seed, epoch as u64);
            epoch_samples = if cfg.resample_sparse {
                train_set
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let sc = SparsifyConfig {
                            seed: splitmix64(seed ^ splitmix64(epoch as u64 + 1)),
                            ..SparsifyConfig::default()
                        };
                        let n_points = s.sparse_depth.as_ref().map_or(sc.n_points, |m| m.count_nonzero().max(1));
                        s.clone().sparsified(&SparsifyConfig { n_points, ..sc.for_sample(i as u64) })
                    })
                    .collect::<Result<_>>()?
            } else {
                train_set.to_vec()
            };
        }
        let idx = &order[slot * bs..((slot + 1) * bs).min(order.len())];
        let chunk: Vec<ImageSample> = idx.iter().map(|&i| epoch_samples[i].clone()).collect();
        let batch = Batch::new(&chunk)?;

        let tape = Tape::new();
        let bound = params.bind(&tape);
        let out = model.forward(&bound, &batch)?;
        let (total, value) = model.loss(&out, &batch, &cfg.loss)?;
        if !value.joint.is_finite() {
            return Err(Error::Divergence { step });
        }
        let grads = bound.gradients(&tape.backward(total));
        if grads.values().any(|g| !g.all_finite()) {
            return Err(Error::Divergence { step });
        }
        drop(bound);
        sgd.step(&mut params, &grads, &cfg.optim);

        let last_step = step + 1 == cfg.optim.steps;
        let validate = !val_set.is_empty() && (last_step || (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0));
        let val_loss = if validate {
            let v = validation_loss(model, &params, val_set, cfg)?;
            if !v.is_finite() {
                return Err(Error::Divergence { step });
            }
            if best_val.is_none_or(|b| v < b) {
                best_val = Some(v);
                best = params.clone();
                best_step = step + 1;
            }
            Some(v)
        } else {
            None
        };
        log::debug!("step {step}: joint {:.6}", value.joint);
        log.push(LogRecord {
            step,
            semantic_loss: value.semantic,
            depth_loss: value.depth,
            joint_loss: value.joint,
            lr: cfg.optim.lr,
            val_loss,
        });
    }
    if val_set.is_empty() {
        best = params.clone();
        best_step = cfg.optim.steps;
    }
    Ok(TrainOutcome {
        last: params,
        best,
        best_step,
        best_val_loss: best_val,
        log,
    })
}
