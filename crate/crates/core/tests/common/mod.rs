//! Fixtures and independent reference checks shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsegdepth::autodiff::{Tape, Var};
use semsegdepth::data::{generate_toy_scene, ImageSample, SparsifyConfig};
use semsegdepth::params::{Bound, ParamStore};
use semsegdepth::zoo::{Batch, LossConfig, Model, ModelConfig, VariantName};
use semsegdepth::Tensor;

pub const NC: usize = 4;

/// Toy frames with a sparse draw covering about 4% of the pixels.
pub fn toy_samples(n: usize, seed: u64, h: usize, w: usize) -> Vec<ImageSample> {
    (0..n as u64)
        .map(|i| {
            let s = generate_toy_scene(seed * 1000 + i, NC, h, w).unwrap();
            let cfg = SparsifyConfig {
                n_points: (h * w / 25).max(8),
                seed,
                ..SparsifyConfig::default()
            };
            s.sparsified(&cfg.for_sample(i)).unwrap()
        })
        .collect()
}

pub fn seeded_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// `sum(x * R)` for a fixed random `R`: a scalar whose gradient reaches
/// every element of `x`.
pub fn project<'t>(x: Var<'t>, seed: u64) -> Var<'t> {
    let r = x.tape().constant(seeded_tensor(&x.shape(), seed));
    x.mul(r).sum()
}

pub struct FdReport {
    pub checked: usize,
    pub tensors: usize,
    pub worst: f64,
    pub worst_at: String,
}

/// Compares reverse-mode gradients of the scalar `f` with central
/// differences on sampled parameter entries. Up to `per_tensor` entries with
/// a non-negligible gradient are drawn from every tensor.
pub fn finite_difference_check<F>(params: &ParamStore, f: F, per_tensor: usize, seed: u64) -> FdReport
where
    F: for<'t> Fn(&Bound<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = f(&bound);
    let grads = bound.gradients(&tape.backward(out));
    drop(bound);

    let eval = |p: &ParamStore| {
        let tape = Tape::inference();
        let b = p.bind(&tape);
        f(&b).value().item()
    };
    let eps = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport {
        checked: 0,
        tensors: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    for (key, value) in params.iter() {
        let Some(g) = grads.get(key) else { continue };
        let mut picked = 0;
        let mut tried = 0;
        let mut counted = false;
        while picked < per_tensor && tried < 50 {
            tried += 1;
            let j = rng.random_range(0..value.numel());
            let analytic = g.data()[j];
            if analytic.abs() < 1e-6 {
                continue;
            }
            let mut plus = params.clone();
            plus.get_mut(key).unwrap().data_mut()[j] += eps;
            let mut minus = params.clone();
            minus.get_mut(key).unwrap().data_mut()[j] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            if rel > report.worst {
                report.worst = rel;
                report.worst_at = format!("{key}[{j}]: analytic {analytic:e}, numeric {numeric:e}");
            }
            report.checked += 1;
            picked += 1;
            if !counted {
                report.tensors += 1;
                counted = true;
            }
        }
    }
    report
}

/// Keys whose gradient is exactly zero on every batch.
pub fn dead_parameters(model: &Model, params: &ParamStore, batches: &[Vec<ImageSample>], loss: &LossConfig) -> Vec<String> {
    let mut alive: BTreeMap<String, bool> = params.keys().map(|k| (k.to_owned(), false)).collect();
    for samples in batches {
        let batch = Batch::new(samples).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let out = model.forward(&bound, &batch).unwrap();
        let (total, _) = model.loss(&out, &batch, loss).unwrap();
        let grads = bound.gradients(&tape.backward(total));
        for (k, g) in grads {
            if g.data().iter().any(|&v| v != 0.0) {
                alive.insert(k, true);
            }
        }
    }
    alive.into_iter().filter(|(_, a)| !a).map(|(k, _)| k).collect()
}

pub fn micro_model(variant: VariantName) -> Model {
    Model::new(variant.spec(), &ModelConfig::micro(NC)).unwrap()
}
