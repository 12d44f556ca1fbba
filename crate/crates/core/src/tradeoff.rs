//! Robustness against accuracy.
//!
//! The trade-off game replaces the adversarial payoff by
//! `phi_t = phi_T + lambda * phi_0`. For exact equilibria, raising lambda can
//! only lower the clean loss and raise the adversarial payoff; with SGD
//! solutions the direction is checked on seed averages.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{build_bundle, AttackBundle, AttackMethod, PgdConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::games::{
    solve_leader_classifier, ClassifierStrategy, EquilibriumRecord, GameContext, GameKind,
};
use crate::losses::LossKind;
use crate::metrics::{adversarial_accuracy, clean_loss, mean, payoff};
use crate::net::Network;
use crate::rng::{child_rng, derive_seed, streams};
use crate::train::{train, Architecture, Opponent, ParamBox, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TradeoffConfig {
    pub lambda: f64,
    /// Largest relative change of any single parameter during retraining, in
    /// percent. `f64::INFINITY` (`"inf"` in JSON) removes the constraint.
    #[serde(with = "budget")]
    pub retrain_budget_pct: f64,
    pub nu: f64,
    pub seeds: Vec<u64>,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        TradeoffConfig {
            lambda: 0.5,
            retrain_budget_pct: 3.0,
            nu: 0.01,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl TradeoffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.retrain_budget_pct >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "retrain budget must be >= 0, got {}",
                self.retrain_budget_pct
            )));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidConfig(format!("nu must be positive, got {}", self.nu)));
        }
        Ok(())
    }
}

/// Serde for a percentage budget that may be infinite: JSON numbers, or the
/// string `"inf"`.
pub mod budget {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => t
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("invalid budget {t:?}"))),
        }
    }
}

/// Trade-off game: the G1 solver on `phi_T + lambda * phi_0`. With
/// `lambda = 0` the run is step-for-step the G1 run of the same seed.
pub fn solve_gt(
    data: &Dataset,
    arch: &Architecture,
    eps: f64,
    loss: LossKind,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<EquilibriumRecord> {
    solve_leader_classifier(data, arch, eps, loss, lambda, cfg, GameKind::Gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub lambda_s: f64,
    pub lambda_t: f64,
    /// Fresh best-response payoffs `phi_T` of the two networks.
    pub adversarial_payoff_s: f64,
    pub adversarial_payoff_t: f64,
    pub clean_loss_s: f64,
    pub clean_loss_t: f64,
    /// `payoff_t - payoff_s`; non-negative when the lambda = 0 net is more robust.
    pub robustness_slack: f64,
    /// `clean_s - clean_t`; non-negative when the lambda > 0 net is more accurate.
    pub accuracy_slack: f64,
    pub tolerance: f64,
    /// `None` in diagnostic mode, where no ordering is claimed.
    pub robustness_holds: Option<bool>,
    pub accuracy_holds: Option<bool>,
}

fn record_net(rec: &EquilibriumRecord) -> Result<&Network> {
    match &rec.classifier {
        ClassifierStrategy::Network { net } => Ok(net),
        _ => Err(Error::Binding("trade-off records need a single network".into())),
    }
}

fn record_context<'a>(rec: &'a EquilibriumRecord, data: &Dataset, eps: f64, loss: LossKind) -> Result<&'a GameContext> {
    let ctx = rec
        .context
        .as_ref()
        .ok_or_else(|| Error::Binding("record has no data context".into()))?;
    if !ctx.compatible(&GameContext::new(data, eps, loss)) {
        return Err(Error::Binding(format!(
            "record context (data {}, eps {}, loss {}) differs from (data {}, eps {eps}, loss {loss})",
            ctx.dataset_id,
            ctx.eps,
            ctx.loss,
            data.id()
        )));
    }
    Ok(ctx)
}

/// Compares a lambda = 0 record with a lambda > 0 record: the first should
/// have the lower adversarial payoff and the higher clean loss. Both networks
/// face fresh best responses from the same `attack`. When the lambdas do not
/// increase (and the records differ) the report is diagnostic only.
pub fn check_tradeoff(
    rec_s: &EquilibriumRecord,
    rec_t: &EquilibriumRecord,
    data: &Dataset,
    eps: f64,
    loss: LossKind,
    attack: &AttackMethod,
    tolerance: f64,
) -> Result<TradeoffReport> {
    let cs = record_context(rec_s, data, eps, loss)?;
    let ct = record_context(rec_t, data, eps, loss)?;
    let (ns, nt) = (record_net(rec_s)?, record_net(rec_t)?);
    let fresh = |net: &Network| -> Result<(f64, f64)> {
        let b = build_bundle(net, data, eps, loss, attack)?;
        Ok((payoff(net, &b, data, loss)?, clean_loss(net, data, loss)?))
    };
    let (ps, ls) = fresh(ns)?;
    let (pt, lt) = if ns == nt { (ps, ls) } else { fresh(nt)? };
    let asserted = ns == nt || cs.lambda < ct.lambda;
    let robustness_slack = pt - ps;
    let accuracy_slack = ls - lt;
    Ok(TradeoffReport {
        lambda_s: cs.lambda,
        lambda_t: ct.lambda,
        adversarial_payoff_s: ps,
        adversarial_payoff_t: pt,
        clean_loss_s: ls,
        clean_loss_t: lt,
        robustness_slack,
        accuracy_slack,
        tolerance,
        robustness_holds: asserted.then_some(robustness_slack >= -tolerance),
        accuracy_holds: asserted.then_some(accuracy_slack >= -tolerance),
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (m, (ss / (v.len() - 1) as f64).sqrt())
}

/// Standard error of a difference of two means under a pooled variance.
pub fn pooled_standard_error(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    if n1 + n2 <= 2.0 {
        return 0.0;
    }
    let (_, s1) = mean_std(a);
    let (_, s2) = mean_std(b);
    let pooled = ((n1 - 1.0) * s1 * s1 + (n2 - 1.0) * s2 * s2) / (n1 + n2 - 2.0);
    (pooled * (1.0 / n1 + 1.0 / n2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub adversarial_payoff: f64,
    pub clean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffStudy {
    pub eps: f64,
    pub loss: LossKind,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub runs_s: Vec<SeedOutcome>,
    pub runs_t: Vec<SeedOutcome>,
    pub mean_payoff_s: f64,
    pub mean_payoff_t: f64,
    pub mean_clean_s: f64,
    pub mean_clean_t: f64,
    pub payoff_se: f64,
    pub clean_se: f64,
    /// `mean_payoff_s <= mean_payoff_t + payoff_se`.
    pub robustness_holds: bool,
    /// `mean_clean_s >= mean_clean_t - clean_se`.
    pub accuracy_holds: bool,
    /// The checks are statistical; a single pooled standard error of slack.
    pub statistical: bool,
}

/// Multi-seed trade-off comparison between `lambda_s` and `lambda_t`.
/// Each seed trains both variants from the same initialization and
/// evaluates them against fresh PGD best responses with a shared attack
/// seed.
pub fn tradeoff_study(
    data: &Dataset,
    arch: &Architecture,
    eps: f64,
    loss: LossKind,
    lambda_s: f64,
    lambda_t: f64,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<TradeoffStudy> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let run = |seed: u64, lambda: f64| -> Result<SeedOutcome> {
        let rec = solve_gt(data, arch, eps, loss, lambda, &cfg.with_seed(seed))?;
        let net = record_net(&rec)?;
        let attack = AttackMethod::Pgd(PgdConfig::default().with_seed(derive_seed(seed, streams::PROBE)));
        let b = build_bundle(net, data, eps, loss, &attack)?;
        Ok(SeedOutcome {
            seed,
            adversarial_payoff: payoff(net, &b, data, loss)?,
            clean_loss: clean_loss(net, data, loss)?,
        })
    };
    let pairs = seeds
        .par_iter()
        .map(|&s| Ok((run(s, lambda_s)?, run(s, lambda_t)?)))
        .collect::<Result<Vec<_>>>()?;
    let (runs_s, runs_t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let ps: Vec<f64> = runs_s.iter().map(|r| r.adversarial_payoff).collect();
    let pt: Vec<f64> = runs_t.iter().map(|r| r.adversarial_payoff).collect();
    let cs: Vec<f64> = runs_s.iter().map(|r| r.clean_loss).collect();
    let ct: Vec<f64> = runs_t.iter().map(|r| r.clean_loss).collect();
    let payoff_se = pooled_standard_error(&ps, &pt);
    let clean_se = pooled_standard_error(&cs, &ct);
    let (mps, mpt, mcs, mct) = (mean(&ps), mean(&pt), mean(&cs), mean(&ct));
    Ok(TradeoffStudy {
        eps,
        loss,
        lambda_s,
        lambda_t,
        runs_s,
        runs_t,
        mean_payoff_s: mps,
        mean_payoff_t: mpt,
        mean_clean_s: mcs,
        mean_clean_t: mct,
        payoff_se,
        clean_se,
        robustness_holds: mps <= mpt + payoff_se,
        accuracy_holds: mcs >= mct - clean_se,
        statistical: true,
    })
}

/// Per-parameter interval `[t - p|t|, t + p|t|]` around `params`, clipped to
/// `[-E, E]`. `None` for an infinite budget.
pub fn budget_box(params: &[f64], budget_pct: f64, clip_bound: f64) -> Result<Option<ParamBox>> {
    if !(budget_pct >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "retrain budget must be >= 0, got {budget_pct}"
        )));
    }
    if budget_pct.is_infinite() {
        return Ok(None);
    }
    let p = budget_pct / 100.0;
    Ok(Some(ParamBox {
        lower: params.iter().map(|t| (t - p * t.abs()).max(-clip_bound)).collect(),
        upper: params.iter().map(|t| (t + p * t.abs()).min(clip_bound)).collect(),
    }))
}

/// Clean fine-tuning (cross-entropy) of `net` with every parameter held
/// inside its budget interval. Zero parameters stay zero.
pub fn constrained_retrain(
    net: &Network,
    data: &Dataset,
    budget_pct: f64,
    cfg: &TrainConfig,
) -> Result<Network> {
    let bounds = budget_box(&net.params(), budget_pct, net.clip_bound())?;
    if budget_pct == 0.0 {
        return Ok(net.clone());
    }
    let zeros = AttackBundle::zeros(data, 0.0);
    let out = train(
        net.clone(),
        data,
        0.0,
        LossKind::Ce,
        0.0,
        Opponent::Fixed(&zeros),
        cfg,
        bounds.as_ref(),
    )?;
    Ok(out.net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuLevel {
    pub nu: f64,
    pub unchanged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuProbeReport {
    pub eps: f64,
    pub nu: f64,
    pub trials: usize,
    pub grid_step: f64,
    /// adv01 payoff of the unperturbed network, `-AA`.
    pub base_payoff: f64,
    /// Fraction of trials at radius `nu` whose payoff is unchanged.
    pub unchanged_fraction: f64,
    /// Largest radius of the halving grid `nu, nu/2, ...` at which every
    /// trial left the payoff unchanged; 0 when none did. Empirical only.
    pub stable_nu: f64,
    pub levels: Vec<NuLevel>,
}

const NU_HALVINGS: usize = 12;

/// Samples parameter perturbations with sup-norm below `nu` and re-evaluates
/// the adv01 payoff with the grid oracle.
#[allow(clippy::too_many_arguments)]
pub fn nu_ball_probe(
    net: &Network,
    data: &Dataset,
    eps: f64,
    nu: f64,
    trials: usize,
    grid_step: f64,
    seed: u64,
) -> Result<NuProbeReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::InvalidConfig(format!("nu must be finite and >= 0, got {nu}")));
    }
    let method = AttackMethod::Grid { grid_step };
    let base = -adversarial_accuracy(net, data, eps, &method)?;
    let base_params = net.params();
    let e = net.clip_bound();
    let fraction = |radius: f64, level: usize| -> Result<f64> {
        if radius == 0.0 {
            return Ok(1.0);
        }
        let mut same = 0;
        for t in 0..trials {
            let mut rng = child_rng(derive_seed(seed, level as u64), t as u64);
            let params: Vec<f64> = base_params
                .iter()
                .map(|p| {
                    let d = rng.gen_range(-radius..radius);
                    (p + d).clamp(-e, e)
                })
                .collect();
            let mut probe = net.clone();
            probe.set_params(&params)?;
            if -adversarial_accuracy(&probe, data, eps, &method)? == base {
                same += 1;
            }
        }
        Ok(same as f64 / trials as f64)
    };
    let mut levels = Vec::new();
    let mut stable_nu = 0.0;
    let mut radius = nu;
    for level in 0..=NU_HALVINGS {
        let f = fraction(radius, level)?;
        levels.push(NuLevel {
            nu: radius,
            unchanged_fraction: f,
        });
        if f == 1.0 {
            stable_nu = radius;
            break;
        }
        radius /= 2.0;
    }
    Ok(NuProbeReport {
        eps,
        nu,
        trials,
        grid_step,
        base_payoff: base,
        unchanged_fraction: levels[0].unchanged_fraction,
        stable_nu,
        levels,
    })
}
