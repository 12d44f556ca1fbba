mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use stackgame::losses::{Loss, LossKind};
use stackgame::Error;

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[test]
fn loss_examples() {
    let z = [2.0, 1.0, 0.0];
    assert_eq!(LossKind::Cw.eval(&z, 0).unwrap(), -1.0);
    assert_eq!(LossKind::Adv01.eval(&z, 0).unwrap(), -1.0);
    assert!((LossKind::Ce.eval(&[0.0; 3], 0).unwrap() - 3f64.ln()).abs() < 1e-12);
    assert!((LossKind::Ce.eval(&[0.0; 3], 0).unwrap() - 1.0986123).abs() < 1e-7);
    assert_eq!(LossKind::Mse.eval(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
}

#[test]
fn ce_survives_huge_logits() {
    let v = LossKind::Ce.eval(&[1000.0, 0.0], 1).unwrap();
    assert!((v - 1000.0).abs() < 1e-9);
}

#[test]
fn margin_losses_need_two_classes() {
    assert!(matches!(LossKind::Cw.eval(&[1.0], 0), Err(Error::DegenerateLabelSpace(1))));
    assert!(matches!(LossKind::Adv01.eval(&[1.0], 0), Err(Error::DegenerateLabelSpace(1))));
}

#[test]
fn gradient_closed_forms() {
    let z = [0.3, -1.2, 0.9, 0.1];
    let g = LossKind::Cw.grad(&z, 1).unwrap();
    assert_eq!(g, vec![0.0, -1.0, 1.0, 0.0]);
    assert!((l2(&g) - SQRT2).abs() < 1e-15);
    let g = LossKind::Mse.grad(&z, 1).unwrap();
    for (i, v) in g.iter().enumerate() {
        let want = 2.0 * (z[i] - if i == 1 { 1.0 } else { 0.0 });
        assert_eq!(*v, want);
    }
    // ties among competitors go to the smallest index
    assert_eq!(LossKind::Cw.grad(&[0.5, 0.0, 0.5], 1).unwrap(), vec![1.0, -1.0, 0.0]);
    assert!(matches!(LossKind::Adv01.grad(&z, 0), Err(Error::NonDifferentiableLoss(_))));
}

#[test]
fn lipschitz_constant_values() {
    let mse = Loss::new(LossKind::Mse, 2.0).unwrap();
    assert!((mse.lipschitz_constant(3).unwrap() - 2.0 * 3f64.sqrt() * 2.0).abs() < 1e-12);
    assert!((mse.lipschitz_constant(3).unwrap() - 6.928).abs() < 1e-3);
    assert_eq!(Loss::new(LossKind::Ce, 1.0).unwrap().lipschitz_constant(5).unwrap(), SQRT2);
    assert_eq!(Loss::new(LossKind::Cw, 1.0).unwrap().lipschitz_constant(5).unwrap(), SQRT2);
    assert!(Loss::new(LossKind::Adv01, 1.0).unwrap().lipschitz_constant(2).is_err());
    assert!(Loss::new(LossKind::Mse, 0.0).is_err());
}

#[test]
fn mse_box_corner_exceeds_stated_constant() {
    let loss = Loss::new(LossKind::Mse, 1.0).unwrap();
    let g = LossKind::Mse.grad(&[-1.0, 1.0], 0).unwrap();
    assert!((l2(&g) - 2.0 * 5f64.sqrt()).abs() < 1e-12);
    assert!(l2(&g) > loss.lipschitz_constant(2).unwrap());
    assert!((l2(&g) - loss.sup_gradient_norm(2).unwrap()).abs() < 1e-12);
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(11);
    for kind in [LossKind::Mse, LossKind::Ce, LossKind::Cw] {
        for _ in 0..200 {
            let m = r.gen_range(2..6);
            let z = random_vec(&mut r, m, -3.0, 3.0);
            let y = r.gen_range(0..m);
            let mut s = z.clone();
            s.sort_by(f64::total_cmp);
            if kind == LossKind::Cw && (s[m - 1] - s[m - 2]) < 1e-3 {
                continue;
            }
            let g = kind.grad(&z, y).unwrap();
            let fd = central_diff(|zz| loss_oracle(kind, zz, y), &z, 1e-6);
            for (a, b) in g.iter().zip(fd) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{kind}: {a} vs {b}");
            }
        }
    }
}

fn logits(m: usize, b: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
    (
        prop::collection::vec(-b..=b, m),
        prop::collection::vec(-b..=b, m),
        0..m,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn losses_are_lipschitz_on_the_box((z, w, y) in (2usize..8, prop::sample::select(vec![1.0, 5.0]))
        .prop_flat_map(|(m, b)| logits(m, b))) {
        let m = z.len();
        let b = z.iter().chain(&w).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-9);
        let d = l2(&z.iter().zip(&w).map(|(a, c)| a - c).collect::<Vec<_>>());
        for kind in [LossKind::Mse, LossKind::Ce, LossKind::Cw] {
            let c = Loss::new(kind, b).unwrap().sup_gradient_norm(m).unwrap();
            let gap = (kind.eval(&z, y).unwrap() - kind.eval(&w, y).unwrap()).abs();
            prop_assert!(gap <= c * d + 1e-9, "{kind}: {gap} > {c} * {d}");
        }
        for kind in [LossKind::Ce, LossKind::Cw] {
            let c = Loss::new(kind, b).unwrap().lipschitz_constant(m).unwrap();
            let gap = (kind.eval(&z, y).unwrap() - kind.eval(&w, y).unwrap()).abs();
            prop_assert!(gap <= c * d + 1e-9);
        }
    }

    #[test]
    fn gradient_norms((z, _w, y) in (2usize..12).prop_flat_map(|m| logits(m, 5.0))) {
        prop_assert!(l2(&LossKind::Ce.grad(&z, y).unwrap()) <= SQRT2 + 1e-9);
        prop_assert!((l2(&LossKind::Cw.grad(&z, y).unwrap()) - SQRT2).abs() <= 1e-9);
    }

    #[test]
    fn adv01_is_the_sign_of_cw((z, _w, y) in (2usize..6).prop_flat_map(|m| logits(m, 2.0))) {
        let cw = LossKind::Cw.eval(&z, y).unwrap();
        let a = LossKind::Adv01.eval(&z, y).unwrap();
        prop_assert!(a == 0.0 || a == -1.0);
        let strict_winner = (0..z.len()).all(|l| l == y || z[y] > z[l]);
        prop_assert_eq!(cw < 0.0, strict_winner);
        prop_assert_eq!(a == -1.0, strict_winner);
    }
}
