use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 16e-4,
            momentum: 0.9,
            weight_decay: 5e-5,
            steps: 500,
            batch_size: 2,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: format!("optim.{key}"),
                message: message.into(),
            })
        };
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        Ok(())
    }
}

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay:
/// `g += wd * p; v = m * v + g; p -= lr * v`. Parameters without a gradient
/// are left untouched.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, cfg: &OptimConfig) {
        for (key, p) in params.iter_mut() {
            let Some(g) = grads.get(key) else { continue };
            let v = self
                .velocity
                .entry(key.to_owned())
                .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let d = gv + cfg.weight_decay * *pv;
                *vv = cfg.momentum * *vv + d;
                *pv -= cfg.lr * *vv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new([1], vec![value]).unwrap());
        s
    }

    fn grad(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::new([1], vec![value]).unwrap())])
    }

    #[test]
    fn plain_step_is_p_minus_lr_g() {
        let mut p = single(0.75);
        let cfg = OptimConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0, ..Default::default() };
        Sgd::new().step(&mut p, &grad(2.5), &cfg);
        assert_eq!(p.get("w").unwrap().data()[0], 0.75 - 0.1 * 2.5);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = single(1.0);
        let cfg = OptimConfig { lr: 0.5, momentum: 0.9, weight_decay: 0.0, ..Default::default() };
        let mut opt = Sgd::new();
        opt.step(&mut p, &grad(1.0), &cfg);
        opt.step(&mut p, &grad(1.0), &cfg);
        // Velocities 1 and 1.9.
        assert!((p.get("w").unwrap().data()[0] - (1.0 - 0.5 - 0.95)).abs() < 1e-15);
    }

    #[test]
    fn decay_alone_shrinks_monotonically() {
        let mut p = single(-3.0);
        let cfg = OptimConfig::default();
        let mut opt = Sgd::new();
        let mut last = 3.0;
        for _ in 0..50 {
            opt.step(&mut p, &grad(0.0), &cfg);
            let now = p.get("w").unwrap().data()[0].abs();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn missing_gradient_means_no_update() {
        let mut p = single(1.0);
        Sgd::new().step(&mut p, &BTreeMap::new(), &OptimConfig::default());
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }
}
