//! Classification losses on logit vectors.
//!
//! Four losses are supported: squared error against the one-hot target,
//! cross-entropy, the Carlini-Wagner margin `max_{l != y} z_l - z_y`, and the
//! 0/-1 adversarial indicator derived from the sign of that margin. Labels are
//! zero-based class indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Ce,
    Cw,
    Adv01,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Mse, LossKind::Ce, LossKind::Cw, LossKind::Adv01];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Ce => "ce",
            LossKind::Cw => "cw",
            LossKind::Adv01 => "adv01",
        }
    }

    pub fn is_differentiable(self) -> bool {
        !matches!(self, LossKind::Adv01)
    }

    /// The loss used by gradient-based inner maximization. `adv01` is
    /// piecewise constant, so attacks climb the cw margin instead: a point
    /// with larger cw margin never has a smaller adv01 value.
    pub fn attack_surrogate(self) -> LossKind {
        match self {
            LossKind::Adv01 => LossKind::Cw,
            k => k,
        }
    }

    /// Evaluates the loss at logits `z` for the zero-based label `y`.
    pub fn eval(self, z: &[f64], y: usize) -> Result<f64> {
        check_label(z, y)?;
        match self {
            LossKind::Mse => Ok(z
                .iter()
                .enumerate()
                .map(|(i, &zi)| {
                    let d = zi - if i == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum()),
            LossKind::Ce => Ok(log_sum_exp(z) - z[y]),
            LossKind::Cw => Ok(cw_margin(z, y)?.1),
            LossKind::Adv01 => {
                let (_, margin) = cw_margin(z, y)?;
                Ok(if margin >= 0.0 { 0.0 } else { -1.0 })
            }
        }
    }

    /// Gradient of [`LossKind::eval`] with respect to the logits.
    pub fn grad(self, z: &[f64], y: usize) -> Result<Vec<f64>> {
        check_label(z, y)?;
        match self {
            LossKind::Mse => Ok(z
                .iter()
                .enumerate()
                .map(|(i, &zi)| 2.0 * (zi - if i == y { 1.0 } else { 0.0 }))
                .collect()),
            LossKind::Ce => {
                let mut p = softmax(z);
                p[y] -= 1.0;
                Ok(p)
            }
            LossKind::Cw => {
                let (l, _) = cw_margin(z, y)?;
                let mut g = vec![0.0; z.len()];
                g[l] = 1.0;
                g[y] = -1.0;
                Ok(g)
            }
            LossKind::Adv01 => Err(Error::NonDifferentiableLoss(self.name())),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss `{s}` (mse|ce|cw|adv01)")))
    }
}

/// A loss together with the logit box `[-B, B]^m` it is considered on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    pub kind: LossKind,
    pub logit_bound: f64,
}

impl Loss {
    pub fn new(kind: LossKind, logit_bound: f64) -> Result<Self> {
        if !(logit_bound > 0.0 && logit_bound.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "logit bound must be positive and finite, got {logit_bound}"
            )));
        }
        Ok(Loss { kind, logit_bound })
    }

    /// Lipschitz constant (w.r.t. the 2-norm of the logits) on the box, for
    /// `m` classes: `2 sqrt(m) max(B, 1)` for mse and `sqrt(2)` for ce and cw.
    pub fn lipschitz_constant(&self, m: usize) -> Result<f64> {
        match self.kind {
            LossKind::Mse => Ok(2.0 * (m as f64).sqrt() * self.logit_bound.max(1.0)),
            LossKind::Ce | LossKind::Cw => Ok(std::f64::consts::SQRT_2),
            LossKind::Adv01 => Err(Error::NoLipschitzConstant(self.kind.name())),
        }
    }

    /// Supremum of the gradient 2-norm over the box, i.e. the smallest valid
    /// Lipschitz constant there. For mse the true-class coordinate of
    /// `z - 1_y` reaches `B + 1`, giving `2 sqrt((m - 1) B^2 + (B + 1)^2)`,
    /// which exceeds [`Loss::lipschitz_constant`] for every `B >= 1`.
    pub fn sup_gradient_norm(&self, m: usize) -> Result<f64> {
        let b = self.logit_bound;
        match self.kind {
            LossKind::Mse => Ok(2.0 * ((m as f64 - 1.0) * b * b + (b + 1.0) * (b + 1.0)).sqrt()),
            LossKind::Ce | LossKind::Cw => Ok(std::f64::consts::SQRT_2),
            LossKind::Adv01 => Err(Error::NoLipschitzConstant(self.kind.name())),
        }
    }
}

fn check_label(z: &[f64], y: usize) -> Result<()> {
    if y >= z.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: z.len(),
        });
    }
    Ok(())
}

/// Returns the strongest competing class (smallest index among ties) and the
/// margin `z_l - z_y`.
pub fn cw_margin(z: &[f64], y: usize) -> Result<(usize, f64)> {
    if z.len() < 2 {
        return Err(Error::DegenerateLabelSpace(z.len()));
    }
    check_label(z, y)?;
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (l, &zl) in z.iter().enumerate() {
        if l != y && (best == usize::MAX || zl > best_val) {
            best = l;
            best_val = zl;
        }
    }
    Ok((best, best_val - z[y]))
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|&zi| (zi - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&zi| (zi - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    #[test]
    fn cw_and_adv01_on_reference_logits() {
        let z = [2.0, 1.0, 0.0];
        assert_eq!(LossKind::Cw.eval(&z, 0).unwrap(), -1.0);
        assert_eq!(LossKind::Adv01.eval(&z, 0).unwrap(), -1.0);
        // label 2: margin 2 - 1 > 0, misclassified
        assert_eq!(LossKind::Cw.eval(&z, 1).unwrap(), 1.0);
        assert_eq!(LossKind::Adv01.eval(&z, 1).unwrap(), 0.0);
    }

    #[test]
    fn ce_uniform_logits_is_ln_m() {
        let v = LossKind::Ce.eval(&[0.0, 0.0, 0.0], 0).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-15);
        assert!((v - 1.0986123).abs() < 1e-7);
    }

    #[test]
    fn ce_is_overflow_safe() {
        let v = LossKind::Ce.eval(&[1000.0, 0.0], 1).unwrap();
        assert!((v - 1000.0).abs() < 1e-9);
        let g = LossKind::Ce.grad(&[1000.0, 0.0], 1).unwrap();
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn mse_zero_at_one_hot() {
        assert_eq!(LossKind::Mse.eval(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert_eq!(
            LossKind::Mse.grad(&[0.5, 1.0, -1.0], 1).unwrap(),
            vec![1.0, 0.0, -2.0]
        );
    }

    #[test]
    fn cw_gradient_shape_and_norm() {
        let g = LossKind::Cw.grad(&[0.3, -1.0, 0.9, 0.1], 1).unwrap();
        assert_eq!(g, vec![0.0, -1.0, 1.0, 0.0]);
        assert!((norm(&g) - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cw_tie_break_prefers_smallest_index() {
        let (l, m) = cw_margin(&[0.5, 0.0, 0.5], 1).unwrap();
        assert_eq!(l, 0);
        assert_eq!(m, 0.5);
        // a tie between the label and a competitor is not robust
        assert_eq!(LossKind::Adv01.eval(&[0.5, 0.5], 0).unwrap(), 0.0);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            LossKind::Cw.eval(&[1.0], 0),
            Err(Error::DegenerateLabelSpace(1))
        ));
        assert!(matches!(
            LossKind::Adv01.grad(&[1.0, 0.0], 0),
            Err(Error::NonDifferentiableLoss("adv01"))
        ));
        assert!(matches!(
            LossKind::Mse.eval(&[1.0, 0.0], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
        let adv = Loss::new(LossKind::Adv01, 1.0).unwrap();
        assert!(adv.lipschitz_constant(3).is_err());
        assert!(Loss::new(LossKind::Mse, 0.0).is_err());
    }

    #[test]
    fn lipschitz_constants() {
        let mse = Loss::new(LossKind::Mse, 2.0).unwrap();
        assert!((mse.lipschitz_constant(3).unwrap() - 6.928203230275509).abs() < 1e-12);
        let mse_small = Loss::new(LossKind::Mse, 0.5).unwrap();
        assert!((mse_small.lipschitz_constant(4).unwrap() - 4.0).abs() < 1e-12);
        for kind in [LossKind::Ce, LossKind::Cw] {
            let l = Loss::new(kind, 7.0).unwrap();
            assert_eq!(l.lipschitz_constant(10).unwrap(), std::f64::consts::SQRT_2);
        }
    }

    #[test]
    fn names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("hinge".parse::<LossKind>().is_err());
    }
}
