//! Mini-batch gradient descent to a well-trained point.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::network::{LayerParams, Network, NetworkSpec};
use crate::rng;
use crate::tensor::norm_l2;

/// Default stopping threshold on `||grad f|| / param_count`.
pub const DEFAULT_GRAD_NORM_TARGET: f64 = 1e-3;

const TAG_SHUFFLE: u64 = 0x5AFF;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    /// Samples per step; `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_target")]
    pub grad_norm_target: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_target() -> f64 {
    DEFAULT_GRAD_NORM_TARGET
}

impl TrainConfig {
    pub fn sgd(lr: f64, epochs: usize) -> Self {
        Self {
            optimizer: Optimizer::Sgd,
            lr,
            epochs,
            batch_size: None,
            grad_norm_target: DEFAULT_GRAD_NORM_TARGET,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Mean loss over the training set at the saved parameters.
    pub final_loss: f64,
    /// `||grad f|| / param_count` at the saved parameters, `f` the mean loss.
    pub grad_norm: f64,
    pub grad_norm_target: f64,
    pub epochs_run: usize,
    pub seed: u64,
    pub dataset_id: String,
}

/// A trained network: spec, flat parameters and how they were obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        Network::from_flat(self.spec.clone(), &self.params)
    }
}

/// `||grad|| / count`.
pub fn normalized_grad_norm(grad: &[f64]) -> f64 {
    norm_l2(grad) / grad.len().max(1) as f64
}

/// Trains `net` in place on `data` and returns the resulting checkpoint.
///
/// Stops as soon as the full-dataset gradient of the mean loss, divided by
/// the parameter count, is at most `grad_norm_target`. Deterministic for a
/// fixed config, dataset and executor-independent.
pub fn train<E: Executor>(net: &mut Network, data: &Dataset, cfg: &TrainConfig, exec: &E) -> Result<Checkpoint> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!(
            "learning rate must be >= 0, got {}",
            cfg.lr
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    if let Optimizer::Momentum { beta } = cfg.optimizer {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidConfig(alloc::format!(
                "momentum must lie in [0, 1), got {beta}"
            )));
        }
    }
    let p = net.param_count();
    let full_batch = cfg.batch_size.is_none_or(|b| b >= data.len());
    let mut flat = net.flat_params();
    let mut velocity = vec![0.0; p];
    let (mut loss, mut grad) = net.loss_and_gradient(exec, net.params(), data)?;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                epoch: epoch.saturating_sub(1),
            });
        }
        if normalized_grad_norm(&grad) <= cfg.grad_norm_target {
            break;
        }
        if full_batch {
            step(cfg, &mut flat, &mut velocity, &grad);
        } else {
            let batch = cfg.batch_size.unwrap_or(data.len()).max(1);
            let mut order: Vec<usize> = (0..data.len()).collect();
            rng::shuffle(&mut rng::stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]), &mut order);
            for indices in order.chunks(batch) {
                let params = net.unflatten(&flat)?;
                let g = batch_gradient(net, &params, data, indices)?;
                step(cfg, &mut flat, &mut velocity, &g);
            }
        }
        if flat.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        net.set_flat_params(&flat)?;
        epochs_run = epoch + 1;
        (loss, grad) = net.loss_and_gradient(exec, net.params(), data)?;
    }
    if !loss.is_finite() {
        return Err(Error::Divergence {
            epoch: epochs_run.saturating_sub(1),
        });
    }
    Ok(Checkpoint {
        spec: net.spec().clone(),
        params: net.flat_params(),
        meta: TrainingMeta {
            final_loss: loss,
            grad_norm: normalized_grad_norm(&grad),
            grad_norm_target: cfg.grad_norm_target,
            epochs_run,
            seed: cfg.seed,
            dataset_id: data.id().into(),
        },
    })
}

fn step(cfg: &TrainConfig, flat: &mut [f64], velocity: &mut [f64], grad: &[f64]) {
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (w, g) in flat.iter_mut().zip(grad) {
                *w -= cfg.lr * g;
            }
        }
        Optimizer::Momentum { beta } => {
            for ((w, v), g) in flat.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                *v = beta * *v + g;
                *w -= cfg.lr * *v;
            }
        }
    }
}

fn batch_gradient(net: &Network, params: &LayerParams, data: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    let mut ev = net.evaluator();
    let mut g = vec![0.0; net.param_count()];
    for &i in indices {
        let (x, y) = data.sample(i);
        ev.loss(params, x, y)?;
        ev.add_param_gradient(&mut g)?;
    }
    let m = indices.len() as f64;
    for v in g.iter_mut() {
        *v /= m;
    }
    Ok(g)
}
