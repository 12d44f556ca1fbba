//! Inner maximization over the infinity-ball `B(x, eps)`.
//!
//! [`pgd_attack`] is the sign-gradient heuristic used inside training loops;
//! [`grid_oracle`] enumerates a lattice over the ball and is the ground truth
//! for inputs of dimension at most three. [`build_bundle`] assembles one
//! perturbation per sample into an [`AttackBundle`].

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::net::Network;
use crate::rng::{child_rng, derive_seed};

pub const GRID_MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub steps: usize,
    /// `None` selects `2.5 * eps / steps`.
    pub step_size: Option<f64>,
    pub restarts: usize,
    pub include_zero_start: bool,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig {
            steps: 40,
            step_size: None,
            restarts: 4,
            include_zero_start: true,
            seed: 0,
        }
    }
}

impl PgdConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        PgdConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("pgd steps must be at least 1".into()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "pgd step size must be positive, got {s}"
                )));
            }
        }
        if self.restarts == 0 && !self.include_zero_start {
            return Err(Error::InvalidConfig(
                "pgd needs a zero start or at least one random restart".into(),
            ));
        }
        Ok(())
    }

    pub fn step_for(&self, eps: f64) -> f64 {
        self.step_size.unwrap_or(2.5 * eps / self.steps as f64)
    }
}

/// How the per-sample inner maximum is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AttackMethod {
    Pgd(PgdConfig),
    Grid { grid_step: f64 },
}

impl AttackMethod {
    pub fn is_exact(&self) -> bool {
        matches!(self, AttackMethod::Grid { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome {
    pub delta: Vec<f64>,
    /// Value of the climbed loss at `x + delta`.
    pub value: f64,
    /// Set when the requested loss was replaced by a differentiable surrogate.
    pub surrogate: Option<LossKind>,
}

fn check_radius(eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidRadius(eps));
    }
    Ok(())
}

fn loss_at(net: &Network, x: &[f64], delta: &[f64], y: usize, loss: LossKind) -> Result<f64> {
    let xp: Vec<f64> = x.iter().zip(delta).map(|(a, d)| a + d).collect();
    loss.eval(&net.forward(&xp)?, y)
}

/// Projected sign-gradient ascent on `loss(C(x + delta), y)` over
/// `||delta||_inf <= eps`.
///
/// Starts from zero (when enabled) and from `restarts` uniform points of the
/// ball; restart `r` draws from stream `r` of `cfg.seed`, so adding restarts
/// never lowers the result. The best iterate seen is returned.
pub fn pgd_attack(
    net: &Network,
    x: &[f64],
    y: usize,
    eps: f64,
    loss: LossKind,
    cfg: &PgdConfig,
) -> Result<PgdOutcome> {
    check_radius(eps)?;
    cfg.validate()?;
    let objective = loss.attack_surrogate();
    let surrogate = (objective != loss).then_some(objective);
    let n = x.len();
    let zero = vec![0.0; n];
    if eps == 0.0 {
        let value = loss_at(net, x, &zero, y, objective)?;
        return Ok(PgdOutcome {
            delta: zero,
            value,
            surrogate,
        });
    }
    let step = cfg.step_for(eps);

    let mut best_delta = zero.clone();
    let mut best_value = f64::NEG_INFINITY;
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(cfg.restarts + 1);
    if cfg.include_zero_start {
        starts.push(zero);
    }
    for r in 0..cfg.restarts {
        let mut rng = child_rng(cfg.seed, r as u64);
        starts.push((0..n).map(|_| rng.gen_range(-eps..=eps)).collect());
    }

    let mut xp = vec![0.0; n];
    for mut delta in starts {
        for _ in 0..cfg.steps {
            for ((p, a), d) in xp.iter_mut().zip(x).zip(&delta) {
                *p = a + d;
            }
            let g = net.gradients(&xp, y, objective)?;
            if g.loss_value > best_value {
                best_value = g.loss_value;
                best_delta.clone_from(&delta);
            }
            for (d, gi) in delta.iter_mut().zip(&g.wrt_input) {
                let s = if *gi > 0.0 {
                    1.0
                } else if *gi < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *d = (*d + step * s).clamp(-eps, eps);
            }
        }
        let v = loss_at(net, x, &delta, y, objective)?;
        if v > best_value {
            best_value = v;
            best_delta = delta;
        }
    }
    Ok(PgdOutcome {
        delta: best_delta,
        value: best_value,
        surrogate,
    })
}

/// Lattice coordinates `-eps, -eps + step, ...` up to and including `+eps`.
pub fn lattice(eps: f64, grid_step: f64) -> Vec<f64> {
    if eps == 0.0 {
        return vec![0.0];
    }
    let intervals = (2.0 * eps / grid_step - 1e-9).ceil().max(1.0) as usize;
    let mut pts: Vec<f64> = (0..intervals)
        .map(|i| -eps + i as f64 * grid_step)
        .collect();
    pts.push(eps);
    pts
}

/// Exhaustive maximum of `loss(C(x + delta), y)` over the lattice
/// `{-eps, -eps + grid_step, ..., eps}^n`, visited in lexicographic order;
/// the first maximizer wins ties.
pub fn grid_oracle(
    net: &Network,
    x: &[f64],
    y: usize,
    eps: f64,
    loss: LossKind,
    grid_step: f64,
) -> Result<(Vec<f64>, f64)> {
    check_radius(eps)?;
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    let n = x.len();
    if n > GRID_MAX_DIM {
        return Err(Error::DimensionTooLarge {
            max: GRID_MAX_DIM,
            got: n,
        });
    }
    let axis = lattice(eps, grid_step);
    let mut idx = vec![0usize; n];
    let mut delta = vec![0.0; n];
    let mut best = (vec![0.0; n], f64::NEG_INFINITY);
    loop {
        for (d, &i) in delta.iter_mut().zip(&idx) {
            *d = axis[i];
        }
        let v = loss_at(net, x, &delta, y, loss)?;
        if v > best.1 {
            best = (delta.clone(), v);
        }
        // odometer, last coordinate fastest
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axis.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Per-sample best response under `method` for the requested loss; returns
/// the perturbation and the requested loss evaluated there.
pub fn best_response(
    net: &Network,
    x: &[f64],
    y: usize,
    eps: f64,
    loss: LossKind,
    method: &AttackMethod,
) -> Result<(Vec<f64>, f64)> {
    match method {
        AttackMethod::Pgd(cfg) => {
            let out = pgd_attack(net, x, y, eps, loss, cfg)?;
            let value = match out.surrogate {
                Some(_) => loss_at(net, x, &out.delta, y, loss)?,
                None => out.value,
            };
            Ok((out.delta, value))
        }
        AttackMethod::Grid { grid_step } => grid_oracle(net, x, y, eps, loss, *grid_step),
    }
}

/// One perturbation per sample of a dataset: a pure Adversary strategy.
/// Serialized through [`BundleFile`](crate::io::BundleFile).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "crate::io::BundleFile", try_from = "crate::io::BundleFile")]
pub struct AttackBundle {
    pub epsilon: f64,
    pub dataset_id: String,
    pub deltas: Vec<Vec<f64>>,
}

impl AttackBundle {
    pub fn zeros(data: &Dataset, eps: f64) -> Self {
        AttackBundle {
            epsilon: eps,
            dataset_id: data.id().to_string(),
            deltas: vec![vec![0.0; data.dim()]; data.len()],
        }
    }

    /// Checks the bundle is bound to `data` and inside its ball.
    pub fn check_binding(&self, data: &Dataset) -> Result<()> {
        if self.dataset_id != data.id() {
            return Err(Error::Binding(format!(
                "bundle is bound to dataset {}, got {}",
                self.dataset_id,
                data.id()
            )));
        }
        if self.deltas.len() != data.len() {
            return Err(Error::Binding(format!(
                "bundle has {} perturbations for {} samples",
                self.deltas.len(),
                data.len()
            )));
        }
        for (i, d) in self.deltas.iter().enumerate() {
            if d.len() != data.dim() {
                return Err(Error::Binding(format!(
                    "perturbation {i} has length {}, expected {}",
                    d.len(),
                    data.dim()
                )));
            }
            if d.iter().any(|v| !(v.abs() <= self.epsilon)) {
                return Err(Error::Binding(format!(
                    "perturbation {i} leaves the {}-ball",
                    self.epsilon
                )));
            }
        }
        Ok(())
    }

    /// Perturbed input `x_i + delta_i`.
    pub fn perturbed(&self, data: &Dataset, i: usize) -> Vec<f64> {
        data.input(i)
            .iter()
            .zip(&self.deltas[i])
            .map(|(a, d)| a + d)
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.deltas
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Per-sample best responses `(delta_i, loss at x_i + delta_i)`, in sample
/// order. The PGD stream of sample `i` is seeded by `derive_seed(cfg.seed, i)`,
/// so the result does not depend on the thread count.
pub fn best_responses(
    net: &Network,
    data: &Dataset,
    eps: f64,
    loss: LossKind,
    method: &AttackMethod,
) -> Result<Vec<(Vec<f64>, f64)>> {
    check_radius(eps)?;
    data.check_compatible(net.input_dim(), net.output_dim())?;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let m = match method {
                AttackMethod::Pgd(cfg) => {
                    AttackMethod::Pgd(cfg.with_seed(derive_seed(cfg.seed, i as u64)))
                }
                other => *other,
            };
            best_response(net, data.input(i), data.label(i), eps, loss, &m)
        })
        .collect()
}

/// Best response to `net` on every sample, as an Adversary strategy.
pub fn build_bundle(
    net: &Network,
    data: &Dataset,
    eps: f64,
    loss: LossKind,
    method: &AttackMethod,
) -> Result<AttackBundle> {
    let deltas = best_responses(net, data, eps, loss, method)?
        .into_iter()
        .map(|(d, _)| d)
        .collect();
    Ok(AttackBundle {
        epsilon: eps,
        dataset_id: data.id().to_string(),
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(w: &[f64], b: &[f64], n: usize) -> Network {
        let m = b.len();
        Network::from_parts(&[n, m], vec![w.to_vec()], vec![b.to_vec()], 10.0, 0).unwrap()
    }

    #[test]
    fn zero_radius_gives_zero_delta() {
        let net = Network::random(&[2, 4, 3], 1.0, 1).unwrap();
        let out = pgd_attack(&net, &[0.3, 0.4], 1, 0.0, LossKind::Ce, &PgdConfig::default()).unwrap();
        assert_eq!(out.delta, vec![0.0, 0.0]);
        let (d, v) = grid_oracle(&net, &[0.3, 0.4], 1, 0.0, LossKind::Ce, 0.01).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
        assert_eq!(v, LossKind::Ce.eval(&net.forward(&[0.3, 0.4]).unwrap(), 1).unwrap());
    }

    #[test]
    fn negative_radius_rejected() {
        let net = Network::random(&[2, 3], 1.0, 1).unwrap();
        assert!(matches!(
            pgd_attack(&net, &[0.3, 0.4], 1, -0.1, LossKind::Ce, &PgdConfig::default()),
            Err(Error::InvalidRadius(_))
        ));
    }

    #[test]
    fn grid_refuses_high_dimension() {
        let net = Network::random(&[4, 2], 1.0, 1).unwrap();
        assert!(matches!(
            grid_oracle(&net, &[0.0; 4], 0, 0.1, LossKind::Cw, 0.05),
            Err(Error::DimensionTooLarge { max: 3, got: 4 })
        ));
    }

    #[test]
    fn lattice_includes_endpoints() {
        let l = lattice(0.1, 0.05);
        assert_eq!(l.len(), 5);
        assert_eq!(l[0], -0.1);
        assert_eq!(*l.last().unwrap(), 0.1);
        let uneven = lattice(0.1, 0.03);
        assert_eq!(*uneven.last().unwrap(), 0.1);
        assert!(uneven.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 0.03 + 1e-12));
    }

    #[test]
    fn adv01_is_attacked_through_cw() {
        let net = linear(&[1.0, -1.0], &[0.0, 0.05], 1);
        let out = pgd_attack(&net, &[0.5], 0, 0.1, LossKind::Adv01, &PgdConfig::default()).unwrap();
        assert_eq!(out.surrogate, Some(LossKind::Cw));
        let (_, v) = best_response(
            &net,
            &[0.5],
            0,
            0.1,
            LossKind::Adv01,
            &AttackMethod::Pgd(PgdConfig::default()),
        )
        .unwrap();
        assert!(v == 0.0 || v == -1.0);
    }

    #[test]
    fn linear_cw_attack_hits_the_corner() {
        // z = Wx: the cw margin against class l is (w_l - w_y) . (x + delta)
        let w = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let net = linear(&w, &[0.0, 0.0, 0.0], 2);
        let x = [0.4, 0.6];
        let eps = 0.1;
        let y = 0;
        let mut oracle = f64::NEG_INFINITY;
        for l in 1..3 {
            let (dl0, dl1) = (w[2 * l] - w[0], w[2 * l + 1] - w[1]);
            let v = dl0 * (x[0] + eps * dl0.signum()) + dl1 * (x[1] + eps * dl1.signum());
            oracle = oracle.max(v);
        }
        let out = pgd_attack(&net, &x, y, eps, LossKind::Cw, &PgdConfig::default()).unwrap();
        assert!((out.value - oracle).abs() < 1e-9, "{} vs {oracle}", out.value);
    }

    #[test]
    fn bundle_binding_errors() {
        let data = Dataset::new(vec![vec![0.2], vec![0.8]], vec![0, 1]).unwrap();
        let other = Dataset::new(vec![vec![0.3], vec![0.8]], vec![0, 1]).unwrap();
        let b = AttackBundle::zeros(&data, 0.1);
        b.check_binding(&data).unwrap();
        assert!(matches!(b.check_binding(&other), Err(Error::Binding(_))));
        let mut bad = b.clone();
        bad.deltas[0][0] = 0.2;
        assert!(bad.check_binding(&data).is_err());
    }
}
