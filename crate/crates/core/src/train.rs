//! Projected mini-batch SGD against an Adversary.
//!
//! One trainer serves every Classifier-side solver. Each round fixes the
//! Adversary's bundle (a fresh PGD best response, or a given fixed bundle)
//! and then runs one shuffled pass of momentum SGD on
//!
//! `(phi_T(Theta, A) + lambda * phi_0(Theta)) / (1 + lambda)`,
//!
//! projecting after every step onto the parameter cube and, when given, onto
//! per-parameter boxes. The `1 / (1 + lambda)` factor rescales the objective
//! without moving its minimizers, so one learning rate serves every lambda.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{build_bundle, AttackBundle, AttackMethod, PgdConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{clean_loss, payoff};
use crate::net::Network;
use crate::rng::{child_rng, derive_seed, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_dims: Vec<usize>,
    pub clip_bound: f64,
}

impl Architecture {
    pub fn new(layer_dims: Vec<usize>, clip_bound: f64) -> Self {
        Architecture {
            layer_dims,
            clip_bound,
        }
    }

    pub fn init(&self, seed: u64) -> Result<Network> {
        Network::random(&self.layer_dims, self.clip_bound, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Learning rate of the last round as a fraction of the first; the rate
    /// decays linearly in between. 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
    pub attack: PgdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 16,
            final_lr_fraction: 0.02,
            seed: 0,
            attack: PgdConfig {
                steps: 10,
                restarts: 1,
                ..PgdConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        TrainConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::InvalidConfig(format!(
                "final learning-rate fraction must lie in [0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        self.attack.validate()
    }
}

/// Per-coordinate parameter intervals, intersected with the cube `[-E, E]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn contains(&self, params: &[f64]) -> bool {
        params
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(p, (lo, hi))| lo <= p && p <= hi)
    }
}

/// Who plays the Adversary while the Classifier trains.
#[derive(Debug, Clone, Copy)]
pub enum Opponent<'a> {
    /// A fresh PGD best response at the start of every round.
    BestResponse,
    /// A fixed perturbation bundle.
    Fixed(&'a AttackBundle),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round: usize,
    /// `phi_T` at the round's bundle, before the round's updates.
    pub payoff: f64,
    /// `phi_T + lambda * phi_0` at the same point.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub trace: Vec<Round>,
}

/// The PGD configuration used for round `round` of a run seeded by `seed`.
pub fn round_attack(cfg: &TrainConfig, round: usize) -> AttackMethod {
    AttackMethod::Pgd(
        cfg.attack
            .with_seed(derive_seed(derive_seed(cfg.seed, streams::ATTACK), round as u64)),
    )
}

/// The PGD configuration for the final best response of a run.
pub fn final_attack(cfg: &TrainConfig) -> AttackMethod {
    round_attack(cfg, cfg.epochs)
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    init: Network,
    data: &Dataset,
    eps: f64,
    loss: LossKind,
    lambda: f64,
    opponent: Opponent<'_>,
    cfg: &TrainConfig,
    bounds: Option<&ParamBox>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !loss.is_differentiable() {
        return Err(Error::NonDifferentiableLoss(loss.name()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    data.check_compatible(init.input_dim(), init.output_dim())?;
    if let Opponent::Fixed(b) = opponent {
        b.check_binding(data)?;
    }
    let mut net = init;
    if let Some(b) = bounds {
        if b.lower.len() != net.param_count() || b.upper.len() != net.param_count() {
            return Err(Error::InputShape {
                expected: net.param_count(),
                got: b.lower.len(),
            });
        }
    }
    let k = net.param_count();
    let mut velocity = vec![0.0; k];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = child_rng(cfg.seed, streams::SHUFFLE);
    let scale = 1.0 / (1.0 + lambda);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for round in 0..cfg.epochs {
        let owned;
        let bundle = match opponent {
            Opponent::Fixed(b) => b,
            Opponent::BestResponse => {
                owned = build_bundle(&net, data, eps, loss, &round_attack(cfg, round))?;
                &owned
            }
        };
        let phi = payoff(&net, bundle, data, loss)?;
        let objective = if lambda > 0.0 {
            phi + lambda * clean_loss(&net, data, loss)?
        } else {
            phi
        };
        if !objective.is_finite() {
            return Err(Error::TrainingDiverged { round });
        }
        trace.push(Round {
            round,
            payoff: phi,
            objective,
        });

        let progress = if cfg.epochs > 1 {
            round as f64 / (cfg.epochs - 1) as f64
        } else {
            0.0
        };
        let lr = cfg.learning_rate * (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; k];
            for &i in batch {
                let g = net.gradients(&bundle.perturbed(data, i), data.label(i), loss)?;
                for (a, b) in grad.iter_mut().zip(&g.wrt_params) {
                    *a += b;
                }
                if lambda > 0.0 {
                    let g0 = net.gradients(data.input(i), data.label(i), loss)?;
                    for (a, b) in grad.iter_mut().zip(&g0.wrt_params) {
                        *a += lambda * b;
                    }
                }
            }
            let step = lr * scale / batch.len() as f64;
            let e = net.clip_bound();
            for (idx, (p, v)) in net.params_iter_mut().zip(velocity.iter_mut()).enumerate() {
                *v = cfg.momentum * *v - step * grad[idx];
                let mut next = (*p + *v).clamp(-e, e);
                if let Some(b) = bounds {
                    next = next.clamp(b.lower[idx], b.upper[idx]);
                }
                *p = next;
            }
            if net.params_iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { round });
            }
        }
    }
    Ok(TrainOutcome { net, trace })
}
