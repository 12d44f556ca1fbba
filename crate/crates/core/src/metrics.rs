//! Robustness and accuracy measurements.
//!
//! All quantities are empirical means over a [`Dataset`]. Per-sample values
//! are computed in parallel and reduced with a fixed pairwise summation, so
//! results do not depend on the thread count.
//!
//! Adversarial accuracy under [`AttackMethod::Grid`] declares a sample robust
//! when every lattice point of its ball has a negative cw margin; this is the
//! quantity matched by the adv01 best-response payoff. A Lipschitz-sound
//! variant, which also covers the points between lattice nodes, is
//! [`certified_adversarial_accuracy`].

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{best_responses, grid_oracle, AttackBundle, AttackMethod};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::net::{dot, Layer, Network};
use crate::rng::{child_rng, streams};

/// Order-fixed pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

pub fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

fn check(net: &Network, data: &Dataset) -> Result<()> {
    data.check_compatible(net.input_dim(), net.output_dim())
}

/// Empirical clean risk `(1/N) sum L(C(x_i), y_i)`.
pub fn clean_loss(net: &Network, data: &Dataset, loss: LossKind) -> Result<f64> {
    check(net, data)?;
    let v = (0..data.len())
        .into_par_iter()
        .map(|i| loss.eval(&net.forward(data.input(i))?, data.label(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&v))
}

/// Fraction of samples whose predicted class is the label.
pub fn clean_accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    check(net, data)?;
    let hits = data
        .iter()
        .map(|(x, y)| net.classify(x).map(|c| c == y))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

/// Mean per-sample inner maximum of the loss over the `eps`-ball. With PGD
/// this is a lower bound on the true adversarial risk.
pub fn adversarial_risk(
    net: &Network,
    data: &Dataset,
    eps: f64,
    loss: LossKind,
    method: &AttackMethod,
) -> Result<f64> {
    let v: Vec<f64> = best_responses(net, data, eps, loss, method)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    Ok(mean(&v))
}

/// Per-sample robustness verdicts: `true` when the search found no point of
/// the ball whose cw margin is non-negative.
pub fn robust_flags(
    net: &Network,
    data: &Dataset,
    eps: f64,
    method: &AttackMethod,
) -> Result<Vec<bool>> {
    Ok(best_responses(net, data, eps, LossKind::Cw, method)?
        .into_iter()
        .map(|(_, margin)| margin < 0.0)
        .collect())
}

/// Fraction of samples whose whole ball is classified as the label. With PGD
/// this is an upper bound on the true value.
pub fn adversarial_accuracy(
    net: &Network,
    data: &Dataset,
    eps: f64,
    method: &AttackMethod,
) -> Result<f64> {
    let flags = robust_flags(net, data, eps, method)?;
    Ok(flags.iter().filter(|&&r| r).count() as f64 / flags.len() as f64)
}

/// Lipschitz-sound adversarial accuracy: a sample counts only when its lattice
/// maximum of the cw margin stays below `-kappa`, where
/// `kappa = sqrt(2) * lambda_hat * grid_step / 2` bounds how far the margin can
/// rise between lattice nodes.
pub fn certified_adversarial_accuracy(
    net: &Network,
    data: &Dataset,
    eps: f64,
    grid_step: f64,
) -> Result<f64> {
    check(net, data)?;
    // at eps = 0 the lattice is the whole ball
    let kappa = if eps == 0.0 {
        0.0
    } else {
        std::f64::consts::SQRT_2 * input_lipschitz(net) * grid_step / 2.0
    };
    let flags = (0..data.len())
        .into_par_iter()
        .map(|i| {
            grid_oracle(net, data.input(i), data.label(i), eps, LossKind::Cw, grid_step)
                .map(|(_, m)| m + kappa < 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(flags.iter().filter(|&&r| r).count() as f64 / flags.len() as f64)
}

/// Empirical payoff `phi_T(Theta, A) = (1/N) sum L(C(x_i + delta_i), y_i)`.
pub fn payoff(net: &Network, bundle: &AttackBundle, data: &Dataset, loss: LossKind) -> Result<f64> {
    check(net, data)?;
    bundle.check_binding(data)?;
    let v = (0..data.len())
        .into_par_iter()
        .map(|i| loss.eval(&net.forward(&bundle.perturbed(data, i))?, data.label(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    PgdLowerBound,
    GridExact,
}

impl From<&AttackMethod> for MethodTag {
    fn from(m: &AttackMethod) -> Self {
        match m {
            AttackMethod::Pgd(_) => MethodTag::PgdLowerBound,
            AttackMethod::Grid { .. } => MethodTag::GridExact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub eps: f64,
    pub loss: LossKind,
    pub method: MethodTag,
    pub clean_loss: f64,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub adversarial_risk: f64,
    /// Payoff of the best-response bundle under `loss`.
    pub payoff: f64,
    /// Lattice-sound adversarial accuracy (grid method only).
    pub certified_adversarial_accuracy: Option<f64>,
}

pub fn evaluate(
    net: &Network,
    data: &Dataset,
    eps: f64,
    loss: LossKind,
    method: &AttackMethod,
) -> Result<RobustnessReport> {
    let responses = best_responses(net, data, eps, loss, method)?;
    let bundle = AttackBundle {
        epsilon: eps,
        dataset_id: data.id().to_string(),
        deltas: responses.iter().map(|(d, _)| d.clone()).collect(),
    };
    let values: Vec<f64> = responses.iter().map(|(_, v)| *v).collect();
    let certified = match method {
        AttackMethod::Grid { grid_step } => {
            Some(certified_adversarial_accuracy(net, data, eps, *grid_step)?)
        }
        AttackMethod::Pgd(_) => None,
    };
    Ok(RobustnessReport {
        eps,
        loss,
        method: method.into(),
        clean_loss: clean_loss(net, data, loss)?,
        clean_accuracy: clean_accuracy(net, data)?,
        adversarial_accuracy: adversarial_accuracy(net, data, eps, method)?,
        adversarial_risk: mean(&values),
        payoff: payoff(net, &bundle, data, loss)?,
        certified_adversarial_accuracy: certified,
    })
}

const POWER_ITERATIONS: usize = 100;
const POWER_TOL: f64 = 1e-10;

/// Largest singular value of a layer's weight matrix by power iteration on
/// `W^T W`.
pub fn spectral_norm(layer: &Layer) -> f64 {
    let n = layer.in_dim;
    if layer.weights.iter().all(|&w| w == 0.0) {
        return 0.0;
    }
    // deterministic start with no special symmetry
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 + 1.0).sqrt()).collect();
    normalize(&mut v);
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let wv: Vec<f64> = (0..layer.out_dim).map(|i| dot(layer.row(i), &v)).collect();
        let mut next = vec![0.0; n];
        for (i, &a) in wv.iter().enumerate() {
            for (dst, &w) in next.iter_mut().zip(layer.row(i)) {
                *dst += a * w;
            }
        }
        let lambda = normalize(&mut next);
        if lambda == 0.0 {
            // start vector in the null space; restart from a basis vector
            v = vec![0.0; n];
            v[0] = 1.0;
            continue;
        }
        let s = lambda.sqrt();
        v = next;
        if (s - sigma).abs() <= POWER_TOL * s {
            sigma = s;
            break;
        }
        sigma = s;
    }
    sigma
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
    n
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `sqrt(n) * prod_l ||W_l||_2`: bounds `||C(x + d) - C(x)||_2 / ||d||_inf`.
/// Biases cancel in the difference and do not enter.
pub fn input_lipschitz(net: &Network) -> f64 {
    let prod: f64 = net.layers().iter().map(spectral_norm).product();
    (net.input_dim() as f64).sqrt() * prod
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub layer_norms: Vec<f64>,
    /// Input-side Lipschitz bound w.r.t. the infinity norm of the perturbation.
    pub lambda_hat: f64,
    /// Estimated bound on `||C(x)||_2` over the `eps`-enlarged cube: sampled
    /// maximum plus `lambda_hat * eps`. An estimate, not a certificate.
    pub omega_hat: f64,
}

const MAX_ENUMERATED_CORNERS: usize = 12;
const SAMPLED_CORNERS: usize = 4096;

pub fn lipschitz_certificate(
    net: &Network,
    eps: f64,
    data: Option<&Dataset>,
) -> Result<LipschitzCertificate> {
    let layer_norms: Vec<f64> = net.layers().iter().map(spectral_norm).collect();
    let lambda_hat = (net.input_dim() as f64).sqrt() * layer_norms.iter().product::<f64>();
    let n = net.input_dim();
    let mut peak: f64 = 0.0;
    let corner = |bits: u64| -> Vec<f64> {
        (0..n).map(|j| ((bits >> (j % 64)) & 1) as f64).collect()
    };
    if n <= MAX_ENUMERATED_CORNERS {
        for bits in 0..(1u64 << n) {
            peak = peak.max(l2(&net.forward(&corner(bits))?));
        }
    } else {
        let mut rng = child_rng(net.seed(), streams::PROBE);
        for _ in 0..SAMPLED_CORNERS {
            let x: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
            peak = peak.max(l2(&net.forward(&x)?));
        }
    }
    if let Some(d) = data {
        check(net, d)?;
        for (x, _) in d.iter() {
            peak = peak.max(l2(&net.forward(x)?));
        }
    }
    Ok(LipschitzCertificate {
        layer_norms,
        lambda_hat,
        omega_hat: peak + lambda_hat * eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLipschitzReport {
    pub lambda_hat: f64,
    pub trials: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

/// Samples `x` uniformly in `[-radius, 1 + radius]^n` and `d` uniformly in
/// the `radius`-ball and counts pairs violating
/// `||C(x + d) - C(x)||_2 <= lambda_hat ||d||_inf`.
pub fn input_lipschitz_check(
    net: &Network,
    radius: f64,
    trials: usize,
    seed: u64,
) -> Result<InputLipschitzReport> {
    let lambda_hat = input_lipschitz(net);
    let n = net.input_dim();
    let mut rng = child_rng(seed, streams::PROBE);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..trials {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..=1.0 + radius)).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..=radius)).collect();
        let dn = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dn == 0.0 {
            continue;
        }
        let xd: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let (za, zb) = (net.forward(&xd)?, net.forward(&x)?);
        let diff: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| a - b).collect();
        let change = l2(&diff);
        max_ratio = max_ratio.max(change / dn);
        let rounding = 64.0 * f64::EPSILON * (l2(&za) + l2(&zb));
        if change > lambda_hat * dn * (1.0 + 1e-12) + rounding {
            violations += 1;
        }
    }
    Ok(InputLipschitzReport {
        lambda_hat,
        trials,
        max_ratio,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLipschitzReport {
    pub trials: usize,
    pub include_biases: bool,
    /// Largest observed `||C_Theta(x) - C_{Theta+alpha}(x)||_2 / ||alpha||_2`.
    pub max_ratio: f64,
    /// Largest observed ratio divided by the per-trial constructive bound.
    pub max_ratio_over_bound: f64,
    pub violations: usize,
}

/// Constructive parameter-side bound for input `x` between `net` and its
/// perturbation `perturbed`:
/// `sum_k (prod_{j > k} ||W^_j||_2) * ||z_{k-1}||_2`, where `z_{k-1}` is the
/// unperturbed input to layer `k`. With bias perturbations each `||z||` is
/// replaced by `sqrt(||z||^2 + 1)` (bias folded into an augmented input).
pub fn param_lipschitz_bound(
    net: &Network,
    perturbed: &Network,
    x: &[f64],
    include_biases: bool,
) -> Result<f64> {
    let zs = net.layer_inputs(x)?;
    let norms: Vec<f64> = perturbed.layers().iter().map(spectral_norm).collect();
    let depth = net.depth();
    let mut total = 0.0;
    for k in 0..depth {
        let above: f64 = norms[k + 1..].iter().product();
        let z = l2(&zs[k]);
        let z = if include_biases { (z * z + 1.0).sqrt() } else { z };
        total += above * z;
    }
    Ok(total)
}

/// Empirical check of parameter-side Lipschitz continuity: random `alpha`
/// with entries in `[-scale, scale]` on the weights (and biases when asked),
/// inputs cycled from `inputs`.
pub fn param_lipschitz_check(
    net: &Network,
    inputs: &[Vec<f64>],
    trials: usize,
    scale: f64,
    include_biases: bool,
    seed: u64,
) -> Result<ParamLipschitzReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("need at least one probe input".into()));
    }
    let mut rng = child_rng(seed, streams::PROBE);
    let mut report = ParamLipschitzReport {
        trials,
        include_biases,
        max_ratio: 0.0,
        max_ratio_over_bound: 0.0,
        violations: 0,
    };
    for t in 0..trials {
        let x = &inputs[t % inputs.len()];
        let mut perturbed = net.clone();
        let mut alpha_sq = 0.0;
        for layer in perturbed.layers_mut() {
            for w in layer.weights.iter_mut() {
                let a = rng.gen_range(-scale..=scale);
                *w += a;
                alpha_sq += a * a;
            }
            if include_biases {
                for b in layer.bias.iter_mut() {
                    let a = rng.gen_range(-scale..=scale);
                    *b += a;
                    alpha_sq += a * a;
                }
            }
        }
        if alpha_sq == 0.0 {
            continue;
        }
        let (za, zb) = (net.forward(x)?, perturbed.forward(x)?);
        let diff: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| a - b).collect();
        let ratio = l2(&diff) / alpha_sq.sqrt();
        // rounding in the subtraction scales with the outputs, not the gap
        let rounding = 64.0 * f64::EPSILON * (l2(&za) + l2(&zb)) / alpha_sq.sqrt();
        let bound = param_lipschitz_bound(net, &perturbed, x, include_biases)?;
        report.max_ratio = report.max_ratio.max(ratio);
        if bound > 0.0 {
            report.max_ratio_over_bound = report.max_ratio_over_bound.max(ratio / bound);
        }
        if ratio > bound * (1.0 + 1e-12) + rounding {
            report.violations += 1;
        }
    }
    Ok(report)
}
