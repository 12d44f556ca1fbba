use stackgame::attacks::{AttackMethod, PgdConfig};
use stackgame::data::Dataset;
use stackgame::games::{solve_g1, ClassifierStrategy, EquilibriumRecord};
use stackgame::losses::LossKind;
use stackgame::metrics::clean_loss;
use stackgame::net::Network;
use stackgame::synth::{generate, Generator, SyntheticSpec};
use stackgame::tradeoff::*;
use stackgame::train::{train, Architecture, Opponent, TrainConfig};
use stackgame::Error;

fn data() -> Dataset {
    generate(&SyntheticSpec {
        generator: Generator::TwoGaussians,
        n_samples: 24,
        class_separation: 0.4,
        noise: 0.1,
        dims: 2,
        seed: 3,
    })
    .unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, ..TrainConfig::default() }
}

fn net_of(rec: &EquilibriumRecord) -> &Network {
    match &rec.classifier {
        ClassifierStrategy::Network { net } => net,
        _ => panic!("expected a network"),
    }
}

#[test]
fn zero_lambda_reproduces_g1_trace() {
    let d = data();
    let arch = Architecture::new(vec![2, 6, 2], 5.0);
    let c = cfg(15).with_seed(4);
    let g1 = solve_g1(&d, &arch, 0.05, LossKind::Ce, &c).unwrap();
    let gt = solve_gt(&d, &arch, 0.05, LossKind::Ce, 0.0, &c).unwrap();
    assert_eq!(g1.trace, gt.trace);
    assert_eq!(net_of(&g1), net_of(&gt));
    assert_eq!(g1.value, gt.value);
}

#[test]
fn huge_lambda_approaches_clean_training() {
    let d = data();
    let arch = Architecture::new(vec![2, 6, 2], 5.0);
    let c = cfg(40).with_seed(1);
    let gt = solve_gt(&d, &arch, 0.05, LossKind::Ce, 1e6, &c).unwrap();
    let plain = train(arch.init(1).unwrap(), &d, 0.0, LossKind::Ce, 0.0, Opponent::BestResponse, &c, None).unwrap();
    let a = clean_loss(net_of(&gt), &d, LossKind::Ce).unwrap();
    let b = clean_loss(&plain.net, &d, LossKind::Ce).unwrap();
    assert!((a - b).abs() <= 0.01 * b, "{a} vs {b}");
}

#[test]
fn zero_radius_objective_is_scaled_clean_loss() {
    let d = data();
    let arch = Architecture::new(vec![2, 4, 2], 5.0);
    let gt = solve_gt(&d, &arch, 0.0, LossKind::Ce, 0.5, &cfg(5)).unwrap();
    for t in &gt.trace {
        assert!((t.objective - 1.5 * t.payoff).abs() <= 1e-12);
    }
}

#[test]
fn check_tradeoff_equality_and_diagnostic_mode() {
    let d = data();
    let arch = Architecture::new(vec![2, 4, 2], 5.0);
    let attack = AttackMethod::Pgd(PgdConfig::default());
    let a = solve_g1(&d, &arch, 0.05, LossKind::Ce, &cfg(5).with_seed(1)).unwrap();
    let self_rep = check_tradeoff(&a, &a, &d, 0.05, LossKind::Ce, &attack, 0.0).unwrap();
    assert_eq!(self_rep.robustness_slack, 0.0);
    assert_eq!(self_rep.accuracy_slack, 0.0);
    assert_eq!((self_rep.robustness_holds, self_rep.accuracy_holds), (Some(true), Some(true)));

    let b = solve_g1(&d, &arch, 0.05, LossKind::Ce, &cfg(5).with_seed(2)).unwrap();
    let diag = check_tradeoff(&a, &b, &d, 0.05, LossKind::Ce, &attack, 0.0).unwrap();
    assert_eq!((diag.robustness_holds, diag.accuracy_holds), (None, None));

    let t = solve_gt(&d, &arch, 0.05, LossKind::Ce, 0.5, &cfg(5).with_seed(2)).unwrap();
    let rep = check_tradeoff(&a, &t, &d, 0.05, LossKind::Ce, &attack, 0.0).unwrap();
    assert!(rep.robustness_holds.is_some());

    assert!(matches!(
        check_tradeoff(&a, &t, &d, 0.1, LossKind::Ce, &attack, 0.0),
        Err(Error::Binding(_))
    ));
}

#[test]
fn pooled_standard_error_by_hand() {
    // variances 1 and 4 (n - 1 denominators), pooled 2.5, times 1/2 + 1/2
    let a = [1.0, 2.0, 3.0];
    let b = [2.0, 4.0, 6.0];
    assert!((pooled_standard_error(&a, &b) - (2.5f64 * (2.0 / 3.0)).sqrt()).abs() < 1e-12);
}

#[test]
fn retrain_respects_the_budget_box() {
    let d = data();
    let arch = Architecture::new(vec![2, 6, 2], 5.0);
    let mut base = arch.init(7).unwrap();
    // force some exact zeros
    base.layers_mut()[0].weights[0] = 0.0;
    base.layers_mut()[1].bias[1] = 0.0;
    let start = base.params();
    let pct = 3.0;
    let out = constrained_retrain(&base, &d, pct, &cfg(20)).unwrap();
    for (p, t) in out.params().iter().zip(&start) {
        assert!((p - t).abs() <= 0.03 * t.abs() + 1e-15, "{p} left [{t} +- 3%]");
        if *t == 0.0 {
            assert_eq!(*p, 0.0);
        }
    }
    assert_ne!(out.params(), start);
    assert_eq!(constrained_retrain(&base, &d, 0.0, &cfg(20)).unwrap(), base);
}

#[test]
fn infinite_budget_is_plain_fine_tuning() {
    let d = data();
    let base = Architecture::new(vec![2, 6, 2], 5.0).init(7).unwrap();
    let c = cfg(10);
    let free = constrained_retrain(&base, &d, f64::INFINITY, &c).unwrap();
    let zeros = stackgame::attacks::AttackBundle::zeros(&d, 0.0);
    let plain = train(base, &d, 0.0, LossKind::Ce, 0.0, Opponent::Fixed(&zeros), &c, None).unwrap();
    assert_eq!(free, plain.net);
    assert!(budget_box(&[1.0], -1.0, 5.0).is_err());
}

#[test]
fn high_margin_net_is_nu_stable() {
    // logit gap 10 * (x0 - 0.5); samples far from the boundary
    let net = Network::from_parts(&[2, 2], vec![vec![-5.0, 0.0, 5.0, 0.0]], vec![vec![2.5, -2.5]], 10.0, 0).unwrap();
    let d = Dataset::new(vec![vec![0.1, 0.5], vec![0.9, 0.5], vec![0.2, 0.3], vec![0.8, 0.1]], vec![0, 1, 0, 1]).unwrap();
    let rep = nu_ball_probe(&net, &d, 0.05, 0.01, 20, 0.01, 0).unwrap();
    assert_eq!(rep.base_payoff, -1.0);
    assert_eq!(rep.unchanged_fraction, 1.0);
    assert_eq!(rep.stable_nu, 0.01);
    let zero = nu_ball_probe(&net, &d, 0.05, 0.0, 3, 0.01, 0).unwrap();
    assert_eq!(zero.unchanged_fraction, 1.0);
    // a huge radius is diagnostic only
    assert!(nu_ball_probe(&net, &d, 0.05, 20.0, 5, 0.01, 0).is_ok());
}

#[test]
fn stable_nu_shrinks_with_radius() {
    let net = Network::from_parts(&[1, 2], vec![vec![-4.0, 4.0]], vec![vec![2.0, -2.0]], 10.0, 0).unwrap();
    let d = Dataset::new(vec![vec![0.2], vec![0.75]], vec![0, 1]).unwrap();
    let mut last = f64::INFINITY;
    let mut violations = 0;
    for eps in [0.0, 0.05, 0.1, 0.2] {
        let rep = nu_ball_probe(&net, &d, eps, 0.5, 10, 0.01, 1).unwrap();
        if rep.stable_nu > last {
            violations += 1;
        }
        last = rep.stable_nu;
    }
    assert!(violations <= 1);
}
