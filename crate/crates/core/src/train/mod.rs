//! Certified training: standard, IBP, PGD and SABR objectives with ε
//! annealing and deterministic seeding.

mod attack;
mod eval;
mod loss;
mod probe;

pub use attack::{pgd_attack, PgdParams};
pub use eval::{certified_accuracy, mean_local_tightness, standard_accuracy};
pub use loss::{
    loss_ce, loss_ce_point, loss_robust_ce, loss_sabr, robust_ce_box, sabr_center, RobustLoss,
    SabrLoss,
};
pub use probe::{default_probe_batch, gradient_alignment_probe, probe_with_batch, ProbeBatch};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bounds::Hyperbox;
use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::net::{Gradients, ReluNet};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Std,
    Ibp,
    Pgd,
    Sabr,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "std" => Ok(Method::Std),
            "ibp" => Ok(Method::Ibp),
            "pgd" => Ok(Method::Pgd),
            "sabr" => Ok(Method::Sabr),
            _ => Err(Error::InvalidArgument(format!("unknown training method {s:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Std => "std",
            Method::Ibp => "ibp",
            Method::Pgd => "pgd",
            Method::Sabr => "sabr",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    /// Adam with β = (0.9, 0.999) and ε = 1e-8.
    Adam,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub eps_target: f64,
    /// Box shrink factor; SABR only.
    pub lambda: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub grad_clip_l2: f64,
    /// ε grows linearly from 0 to `eps_target` over this many epochs.
    pub anneal_epochs: usize,
    pub pgd_steps: usize,
    /// Absolute PGD step; `None` means a quarter of the current ε.
    pub pgd_step_size: Option<f64>,
    pub pgd_restarts: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Training points used for per-epoch metrics (from the start of the set).
    pub metrics_samples: usize,
}

impl TrainConfig {
    /// Desk-scale defaults: 10 epochs, batch 32, lr 5e-3, clip 10, ε ramp
    /// over the first 4 epochs, PGD with 8 steps of ε/4 and one restart.
    pub fn new(method: Method, eps_target: f64) -> Self {
        TrainConfig {
            method,
            eps_target,
            lambda: if method == Method::Sabr { Some(0.4) } else { None },
            epochs: 10,
            batch_size: 32,
            lr: 5e-3,
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: 0.2,
            grad_clip_l2: 10.0,
            anneal_epochs: 4,
            pgd_steps: 8,
            pgd_step_size: None,
            pgd_restarts: 1,
            seed: 0,
            optimizer: Optimizer::Sgd,
            metrics_samples: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eps_target >= 0.0) || !self.eps_target.is_finite() {
            return bad(format!("eps_target must be finite and nonnegative, got {}", self.eps_target));
        }
        if self.eps_target == 0.0 && self.method != Method::Std {
            return bad(format!("eps_target = 0 is only meaningful for std, not {}", self.method));
        }
        match (self.method, self.lambda) {
            (Method::Sabr, None) => return bad("sabr needs lambda".into()),
            (Method::Sabr, Some(l)) if !(0.0..=1.0).contains(&l) => {
                return bad(format!("lambda must lie in [0, 1], got {l}"))
            }
            (m, Some(_)) if m != Method::Sabr => return bad(format!("lambda is only used by sabr, not {m}")),
            _ => {}
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.grad_clip_l2 > 0.0) || !(self.lr_decay_factor > 0.0) {
            return bad("lr, grad_clip_l2 and lr_decay_factor must be positive".into());
        }
        if self.anneal_epochs > self.epochs {
            return bad("anneal_epochs exceeds epochs".into());
        }
        if matches!(self.pgd_step_size, Some(s) if !(s > 0.0)) {
            return bad("pgd_step_size must be positive".into());
        }
        if matches!(self.method, Method::Pgd | Method::Sabr) && (self.pgd_steps == 0 || self.pgd_restarts == 0) {
            return bad("pgd_steps and pgd_restarts must be positive".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }

    /// ε used at optimisation step `step` (0-based) of `steps_per_epoch`.
    pub fn eps_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let ramp = self.anneal_epochs * steps_per_epoch;
        if ramp == 0 {
            return self.eps_target;
        }
        self.eps_target * ((step + 1) as f64 / ramp as f64).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// ε at the last step of the epoch.
    pub eps: f64,
    pub lr: f64,
    pub train_loss: f64,
    pub standard_accuracy: f64,
    /// Certified at `eps_target` on the metric subset.
    pub certified_accuracy: f64,
    pub mean_local_tightness: f64,
    /// Largest parameter-update norm seen this epoch.
    pub max_update_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub net: ReluNet,
}

// Streams below this offset are used for shuffling, one per epoch.
const SAMPLE_STREAM_BASE: u64 = 1 << 32;

fn sample_objective(
    net: &ReluNet,
    cfg: &TrainConfig,
    x: &[f64],
    target: usize,
    eps: f64,
    domain: (f64, f64),
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    let pgd = PgdParams {
        steps: cfg.pgd_steps,
        step_size: cfg.pgd_step_size.unwrap_or(eps / 4.0),
        restarts: cfg.pgd_restarts,
        domain,
    };
    match cfg.method {
        Method::Std => loss_ce_point(net, x, target),
        Method::Ibp => {
            let r = loss_robust_ce(net, x, eps, target)?;
            Ok((r.loss, r.grads))
        }
        Method::Pgd => {
            let adv = pgd_attack(net, x, eps, target, &pgd, rng)?;
            loss_ce_point(net, &adv, target)
        }
        Method::Sabr => {
            let s = loss_sabr(net, x, eps, cfg.lambda.unwrap(), target, &pgd, rng)?;
            let outer = Hyperbox::around(x, eps)?;
            assert!(
                outer.contains_box(&Hyperbox::around(&s.center, s.radius)?, 1e-12),
                "propagated box left the ε-ball"
            );
            Ok((s.robust.loss, s.robust.grads))
        }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Trains a copy of `net` on `data`. Identical inputs give bit-identical
/// reports regardless of thread count.
pub fn train(net: &ReluNet, data: &DatasetHandle, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    net.check_input(data.input_len(), "train")?;
    let mut net = net.clone();
    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let base = Rng::new(cfg.seed, 0);
    let metric_set = data.take(cfg.metrics_samples);
    let mut adam = AdamState {
        m: vec![0.0; net.num_params()],
        v: vec![0.0; net.num_params()],
        t: 0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut eps = 0.0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        base.fork(epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut max_update: f64 = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            eps = cfg.eps_at(step, steps_per_epoch);
            let offset = (epoch * n + b * cfg.batch_size) as u64;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let mut rng = base.fork(SAMPLE_STREAM_BASE + offset + j as u64);
                    sample_objective(&net, cfg, &data.inputs[idx], data.labels[idx], eps, data.domain, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Gradients::zeros_like(&net);
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.add_scaled(g, 1.0);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.scale(scale);
            batch_loss *= scale;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            let norm = grads.l2_norm();
            if norm > cfg.grad_clip_l2 {
                grads.scale(cfg.grad_clip_l2 / norm);
            }
            let update_norm = match cfg.optimizer {
                Optimizer::Sgd => {
                    net.apply_update(&grads, -lr);
                    lr * grads.l2_norm()
                }
                Optimizer::Adam => adam_step(&mut net, &grads, lr, &mut adam)?,
            };
            max_update = max_update.max(update_norm);
            loss_sum += batch_loss * batch.len() as f64;
            step += 1;
        }
        history.push(EpochMetrics {
            epoch,
            eps,
            lr,
            train_loss: loss_sum / n as f64,
            standard_accuracy: standard_accuracy(&net, &metric_set)?,
            certified_accuracy: certified_accuracy(&net, &metric_set, cfg.eps_target)?,
            mean_local_tightness: mean_local_tightness(&net, &metric_set)?,
            max_update_norm: max_update,
        });
    }
    Ok(TrainReport {
        epochs: history,
        net,
    })
}

fn adam_step(net: &mut ReluNet, grads: &Gradients, lr: f64, st: &mut AdamState) -> Result<f64> {
    let (b1, b2, e) = (0.9f64, 0.999f64, 1e-8);
    st.t += 1;
    let g = grads.flatten();
    let mut p = net.flat_params();
    let c1 = 1.0 - b1.powi(st.t);
    let c2 = 1.0 - b2.powi(st.t);
    let mut sq = 0.0;
    for i in 0..p.len() {
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
        let d = lr * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + e);
        p[i] -= d;
        sq += d * d;
    }
    net.set_flat_params(&p)?;
    Ok(sq.sqrt())
}
