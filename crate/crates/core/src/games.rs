//! The three finite-data games between a Classifier and an Adversary.
//!
//! * G1, adversarial training: the Classifier leads,
//!   `min_Theta max_A phi_T(Theta, A)`.
//! * G2, universal adversary: the Adversary leads,
//!   `max_A min_Theta phi_T(Theta, A)`.
//! * G3, simultaneous play in mixed strategies over finite pools.
//!
//! The continuous G1 and G2 solvers are heuristics and produce uncertified
//! records. Over finite strategy pools ([`DiscreteGame`]) all three values
//! come from the exact matrix solvers and are certified; for exact equilibria
//! `G1 >= G3 >= G2`, which [`verify_ordering`] checks.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{build_bundle, AttackBundle, AttackMethod};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::matrix::{matrix_maxmin, matrix_minmax, fictitious_play, FictitiousPlayConfig, MatrixGame};
use crate::metrics::{clean_loss, payoff};
use crate::net::Network;
use crate::rng::{child_rng, derive_seed, streams};
use crate::train::{final_attack, train, Architecture, Opponent, Round, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameKind {
    G1,
    G2,
    G3,
    Gt,
    Matrix,
}

/// What a record's value was computed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameContext {
    pub dataset_id: String,
    pub eps: f64,
    pub loss: LossKind,
    #[serde(default)]
    pub lambda: f64,
}

impl GameContext {
    pub fn new(data: &Dataset, eps: f64, loss: LossKind) -> Self {
        GameContext {
            dataset_id: data.id().to_string(),
            eps,
            loss,
            lambda: 0.0,
        }
    }

    /// Same data, radius and loss; lambda may differ.
    pub fn compatible(&self, other: &GameContext) -> bool {
        self.dataset_id == other.dataset_id && self.eps == other.eps && self.loss == other.loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierStrategy {
    Network { net: Network },
    Mixed { weights: Vec<f64>, pool: Vec<Network> },
    Row { index: usize },
    MixedRows { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryStrategy {
    Bundle { bundle: AttackBundle },
    Mixed { weights: Vec<f64>, pool: Vec<AttackBundle> },
    Column { index: usize },
    MixedColumns { weights: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub payoff: f64,
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

impl From<&Round> for TraceEntry {
    fn from(r: &Round) -> Self {
        TraceEntry {
            round: r.round,
            payoff: r.payoff,
            objective: r.objective,
            gap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    pub game: GameKind,
    pub context: Option<GameContext>,
    pub classifier: ClassifierStrategy,
    pub adversary: AdversaryStrategy,
    pub value: f64,
    /// True when the value is exact for the (possibly discretized) game.
    pub certified: bool,
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EquilibriumRecord {
    /// Recomputes the value of network/bundle strategies on `data`.
    pub fn value_on(&self, data: &Dataset) -> Result<f64> {
        let ctx = self
            .context
            .as_ref()
            .ok_or_else(|| Error::Binding("record has no data context".into()))?;
        if ctx.dataset_id != data.id() {
            return Err(Error::Binding(format!(
                "record is bound to dataset {}, got {}",
                ctx.dataset_id,
                data.id()
            )));
        }
        let (nets, p): (Vec<&Network>, Vec<f64>) = match &self.classifier {
            ClassifierStrategy::Network { net } => (vec![net], vec![1.0]),
            ClassifierStrategy::Mixed { weights, pool } => (pool.iter().collect(), weights.clone()),
            _ => return Err(Error::Binding("classifier strategy is a matrix index".into())),
        };
        let (bundles, q): (Vec<&AttackBundle>, Vec<f64>) = match &self.adversary {
            AdversaryStrategy::Bundle { bundle } => (vec![bundle], vec![1.0]),
            AdversaryStrategy::Mixed { weights, pool } => (pool.iter().collect(), weights.clone()),
            _ => return Err(Error::Binding("adversary strategy is a matrix index".into())),
        };
        let mut total = 0.0;
        for (net, &pi) in nets.iter().zip(&p) {
            if pi == 0.0 {
                continue;
            }
            let clean = if ctx.lambda > 0.0 {
                ctx.lambda * clean_loss(net, data, ctx.loss)?
            } else {
                0.0
            };
            for (b, &qj) in bundles.iter().zip(&q) {
                if qj != 0.0 {
                    total += pi * qj * (payoff(net, b, data, ctx.loss)? + clean);
                }
            }
        }
        Ok(total)
    }
}

/// Alternating Stackelberg solver shared by G1 and its trade-off variant:
/// train against fresh best responses, then answer the final parameters
/// with one more best response. The value is
/// `phi_T(Theta*, A*) + lambda * phi_0(Theta*)`.
pub(crate) fn solve_leader_classifier(
    data: &Dataset,
    arch: &Architecture,
    eps: f64,
    loss: LossKind,
    lambda: f64,
    cfg: &TrainConfig,
    game: GameKind,
) -> Result<EquilibriumRecord> {
    let init = arch.init(cfg.seed)?;
    let out = train(init, data, eps, loss, lambda, Opponent::BestResponse, cfg, None)?;
    let bundle = build_bundle(&out.net, data, eps, loss, &final_attack(cfg))?;
    let mut value = payoff(&out.net, &bundle, data, loss)?;
    if lambda > 0.0 {
        value += lambda * clean_loss(&out.net, data, loss)?;
    }
    if !value.is_finite() {
        return Err(Error::TrainingDiverged { round: cfg.epochs });
    }
    let mut context = GameContext::new(data, eps, loss);
    context.lambda = lambda;
    Ok(EquilibriumRecord {
        game,
        context: Some(context),
        classifier: ClassifierStrategy::Network { net: out.net },
        adversary: AdversaryStrategy::Bundle { bundle },
        value,
        certified: false,
        trace: out.trace.iter().map(TraceEntry::from).collect(),
        notes: vec!["heuristic: PGD best responses and projected SGD".into()],
    })
}

/// Adversarial training game G1.
pub fn solve_g1(
    data: &Dataset,
    arch: &Architecture,
    eps: f64,
    loss: LossKind,
    cfg: &TrainConfig,
) -> Result<EquilibriumRecord> {
    solve_leader_classifier(data, arch, eps, loss, 0.0, cfg, GameKind::G1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct G2Config {
    /// Ascent steps on the bundle per restart.
    pub rounds: usize,
    /// Initial bundles: the zero bundle, then uniform random ones.
    pub restarts: usize,
    /// Classifier trainings per bundle; the inner minimum is the best of them.
    pub inner_runs: usize,
    /// Sign-gradient step on the perturbations; `None` selects `eps / 2`.
    pub ascent_step: Option<f64>,
    pub inner: TrainConfig,
    pub seed: u64,
}

impl Default for G2Config {
    fn default() -> Self {
        G2Config {
            rounds: 4,
            restarts: 2,
            inner_runs: 2,
            ascent_step: None,
            inner: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Universal adversary game G2 by alternating ascent.
///
/// For a candidate bundle `A` the inner minimum is approximated by training
/// `inner_runs` Classifiers against the fixed `A` and keeping the best. The
/// bundle then takes a projected sign-gradient step on the loss of that
/// Classifier. The best `(A, Theta)` seen is returned; its value is a
/// heuristic estimate of the maxmin value.
pub fn solve_g2(
    data: &Dataset,
    arch: &Architecture,
    eps: f64,
    loss: LossKind,
    cfg: &G2Config,
) -> Result<EquilibriumRecord> {
    if !loss.is_differentiable() {
        return Err(Error::NonDifferentiableLoss(loss.name()));
    }
    if cfg.rounds == 0 || cfg.restarts == 0 || cfg.inner_runs == 0 {
        return Err(Error::InvalidConfig(
            "g2 rounds, restarts and inner_runs must be at least 1".into(),
        ));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidRadius(eps));
    }
    let step = cfg.ascent_step.unwrap_or(eps / 2.0);
    let mut best: Option<(AttackBundle, Network, f64)> = None;
    let mut trace = Vec::new();
    let mut counter = 0;
    for restart in 0..cfg.restarts {
        let mut bundle = AttackBundle::zeros(data, eps);
        if restart > 0 && eps > 0.0 {
            let mut rng = child_rng(derive_seed(cfg.seed, streams::ADVERSARY), restart as u64);
            for d in bundle.deltas.iter_mut().flatten() {
                *d = rng.gen_range(-eps..=eps);
            }
        }
        for _ in 0..cfg.rounds {
            let mut inner_best: Option<(Network, f64)> = None;
            for run in 0..cfg.inner_runs {
                let seed = derive_seed(cfg.seed, run as u64);
                let inner = cfg.inner.with_seed(seed);
                let out = train(arch.init(seed)?, data, eps, loss, 0.0, Opponent::Fixed(&bundle), &inner, None)?;
                let v = payoff(&out.net, &bundle, data, loss)?;
                if !v.is_finite() {
                    return Err(Error::TrainingDiverged { round: counter });
                }
                if inner_best.as_ref().map_or(true, |(_, bv)| v < *bv) {
                    inner_best = Some((out.net, v));
                }
            }
            let (net, v) = inner_best.unwrap();
            trace.push(TraceEntry {
                round: counter,
                payoff: v,
                objective: v,
                gap: None,
            });
            counter += 1;
            if best.as_ref().map_or(true, |(_, _, bv)| v > *bv) {
                best = Some((bundle.clone(), net.clone(), v));
            }
            if eps == 0.0 {
                continue;
            }
            let next: Vec<Vec<f64>> = (0..data.len())
                .into_par_iter()
                .map(|i| {
                    let g = net.gradients(&bundle.perturbed(data, i), data.label(i), loss)?;
                    Ok(bundle.deltas[i]
                        .iter()
                        .zip(&g.wrt_input)
                        .map(|(d, gi)| {
                            let s = if *gi > 0.0 { 1.0 } else if *gi < 0.0 { -1.0 } else { 0.0 };
                            (d + step * s).clamp(-eps, eps)
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            bundle.deltas = next;
        }
    }
    let (bundle, net, value) = best.unwrap();
    Ok(EquilibriumRecord {
        game: GameKind::G2,
        context: Some(GameContext::new(data, eps, loss)),
        classifier: ClassifierStrategy::Network { net },
        adversary: AdversaryStrategy::Bundle { bundle },
        value,
        certified: false,
        trace,
        notes: vec!["heuristic lower estimate of the maxmin value".into()],
    })
}

/// A game restricted to finite pools of Classifier and Adversary strategies,
/// with payoff matrix `M[i][j] = phi_T(Theta_i, A_j)`.
#[derive(Debug, Clone)]
pub struct DiscreteGame {
    pub matrix: MatrixGame,
    pub classifiers: Vec<Network>,
    pub adversaries: Vec<AttackBundle>,
    pub context: GameContext,
}

impl DiscreteGame {
    pub fn from_pools(
        classifiers: Vec<Network>,
        adversaries: Vec<AttackBundle>,
        data: &Dataset,
        loss: LossKind,
    ) -> Result<Self> {
        if classifiers.is_empty() || adversaries.is_empty() {
            return Err(Error::InvalidPool(format!(
                "pools must be non-empty (got {} classifiers, {} adversaries)",
                classifiers.len(),
                adversaries.len()
            )));
        }
        let eps = adversaries[0].epsilon;
        if adversaries.iter().any(|b| b.epsilon != eps) {
            return Err(Error::InvalidPool("adversary bundles disagree on epsilon".into()));
        }
        let rows = classifiers
            .par_iter()
            .map(|net| {
                adversaries
                    .iter()
                    .map(|b| payoff(net, b, data, loss))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscreteGame {
            matrix: MatrixGame::new(rows)?,
            classifiers,
            adversaries,
            context: GameContext::new(data, eps, loss),
        })
    }

    fn pure_record(&self, game: GameKind, row: usize, col: usize, trace: Vec<TraceEntry>, certified: bool, note: &str) -> EquilibriumRecord {
        EquilibriumRecord {
            game,
            context: Some(self.context.clone()),
            classifier: ClassifierStrategy::Network {
                net: self.classifiers[row].clone(),
            },
            adversary: AdversaryStrategy::Bundle {
                bundle: self.adversaries[col].clone(),
            },
            value: self.matrix.get(row, col),
            certified,
            trace,
            notes: vec![format!("{note} (row {row}, column {col})")],
        }
    }

    /// Classifier leads: exact minmax over the pools.
    pub fn solve_g1(&self) -> EquilibriumRecord {
        let s = matrix_minmax(&self.matrix);
        self.pure_record(GameKind::G1, s.row, s.col, Vec::new(), true, "enumerated minmax")
    }

    /// Adversary leads: exact maxmin over the pools.
    pub fn solve_g2(&self) -> EquilibriumRecord {
        let s = matrix_maxmin(&self.matrix);
        self.pure_record(GameKind::G2, s.row, s.col, Vec::new(), true, "enumerated maxmin")
    }

    /// Alternating best responses over the pools starting from column
    /// `start`, keeping the best column value `min_i M[i][j]` seen. Never
    /// exceeds the maxmin value.
    pub fn solve_g2_alternating(&self, start: usize) -> EquilibriumRecord {
        let g = &self.matrix;
        let col_value = |j: usize| {
            let mut best = (0, f64::INFINITY);
            for i in 0..g.rows() {
                if g.get(i, j) < best.1 {
                    best = (i, g.get(i, j));
                }
            }
            best
        };
        let mut j = start.min(g.cols() - 1);
        let mut seen = vec![false; g.cols()];
        let mut best = (col_value(j).0, j, col_value(j).1);
        let mut trace = Vec::new();
        while !seen[j] {
            seen[j] = true;
            let (i, v) = col_value(j);
            trace.push(TraceEntry {
                round: trace.len(),
                payoff: v,
                objective: v,
                gap: None,
            });
            if v > best.2 {
                best = (i, j, v);
            }
            let mut next = 0;
            for c in 1..g.cols() {
                if g.get(i, c) > g.get(i, next) {
                    next = c;
                }
            }
            j = next;
        }
        self.pure_record(GameKind::G2, best.0, best.1, trace, false, "alternating best responses")
    }

    /// Simultaneous game: mixed equilibrium by certified fictitious play.
    pub fn solve_g3(&self, fp: &FictitiousPlayConfig) -> Result<EquilibriumRecord> {
        let s = fictitious_play(&self.matrix, fp)?;
        let trace = s
            .trace
            .iter()
            .map(|p| TraceEntry {
                round: p.iteration,
                payoff: 0.5 * (p.lower + p.upper),
                objective: 0.5 * (p.lower + p.upper),
                gap: Some(p.gap()),
            })
            .collect();
        let mut notes = vec![format!(
            "fictitious play: {} iterations, gap {:.3e}{}",
            s.iterations,
            s.gap,
            if s.polished { ", support-polished" } else { "" }
        )];
        if !s.converged {
            notes.push(format!("did not reach tolerance {}", fp.tol));
        }
        Ok(EquilibriumRecord {
            game: GameKind::G3,
            context: Some(self.context.clone()),
            classifier: ClassifierStrategy::Mixed {
                weights: s.row_mix,
                pool: self.classifiers.clone(),
            },
            adversary: AdversaryStrategy::Mixed {
                weights: s.col_mix,
                pool: self.adversaries.clone(),
            },
            value: s.value,
            certified: s.converged,
            trace,
            notes,
        })
    }
}

/// Simultaneous game G3 over finite pools.
pub fn solve_g3_mixed(
    classifier_pool: Vec<Network>,
    adversary_pool: Vec<AttackBundle>,
    data: &Dataset,
    loss: LossKind,
    fp: &FictitiousPlayConfig,
) -> Result<EquilibriumRecord> {
    DiscreteGame::from_pools(classifier_pool, adversary_pool, data, loss)?.solve_g3(fp)
}

/// Strategy pools for G3: per seed a clean-trained and an adversarially
/// trained Classifier; the zero bundle plus a PGD best response to every
/// pool Classifier.
pub fn build_pools(
    data: &Dataset,
    arch: &Architecture,
    eps: f64,
    loss: LossKind,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<(Vec<Network>, Vec<AttackBundle>)> {
    let mut nets = Vec::with_capacity(2 * seeds.len());
    for &seed in seeds {
        let c = cfg.with_seed(seed);
        nets.push(train(arch.init(seed)?, data, 0.0, loss, 0.0, Opponent::BestResponse, &c, None)?.net);
        nets.push(train(arch.init(seed)?, data, eps, loss, 0.0, Opponent::BestResponse, &c, None)?.net);
    }
    let mut bundles = vec![AttackBundle::zeros(data, eps)];
    for (k, net) in nets.iter().enumerate() {
        let attack = match final_attack(cfg) {
            AttackMethod::Pgd(p) => AttackMethod::Pgd(p.with_seed(derive_seed(p.seed, k as u64))),
            m => m,
        };
        bundles.push(build_bundle(net, data, eps, loss, &attack)?);
    }
    Ok((nets, bundles))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub g1: f64,
    pub g3: f64,
    pub g2: f64,
    pub tolerance: f64,
    pub g1_ge_g3: bool,
    pub g3_ge_g2: bool,
    pub holds: bool,
    /// All three records are exact; only then is the check a certificate.
    pub certified: bool,
}

/// Checks `phi(G1) >= phi(G3) >= phi(G2)` up to `tolerance`.
pub fn verify_ordering(
    g1: &EquilibriumRecord,
    g3: &EquilibriumRecord,
    g2: &EquilibriumRecord,
    tolerance: f64,
) -> Result<OrderingReport> {
    match (&g1.context, &g3.context, &g2.context) {
        (None, None, None) => {}
        (Some(a), Some(b), Some(c)) if a.compatible(b) && a.compatible(c) => {}
        _ => {
            return Err(Error::Binding(
                "records were computed on different data, radius or loss".into(),
            ))
        }
    }
    let g1_ge_g3 = g1.value >= g3.value - tolerance;
    let g3_ge_g2 = g3.value >= g2.value - tolerance;
    Ok(OrderingReport {
        g1: g1.value,
        g3: g3.value,
        g2: g2.value,
        tolerance,
        g1_ge_g3,
        g3_ge_g2,
        holds: g1_ge_g3 && g3_ge_g2,
        certified: g1.certified && g2.certified && g3.certified,
    })
}

/// Records for the pure and mixed solutions of a bare matrix game.
pub fn matrix_records(g: &MatrixGame, fp: &FictitiousPlayConfig) -> Result<[EquilibriumRecord; 3]> {
    let rec = |game, classifier, adversary, value, certified, trace| EquilibriumRecord {
        game,
        context: None,
        classifier,
        adversary,
        value,
        certified,
        trace,
        notes: Vec::new(),
    };
    let mm = matrix_minmax(g);
    let xm = matrix_maxmin(g);
    let mixed = fictitious_play(g, fp)?;
    let trace = mixed
        .trace
        .iter()
        .map(|p| TraceEntry {
            round: p.iteration,
            payoff: 0.5 * (p.lower + p.upper),
            objective: 0.5 * (p.lower + p.upper),
            gap: Some(p.gap()),
        })
        .collect();
    Ok([
        rec(
            GameKind::G1,
            ClassifierStrategy::Row { index: mm.row },
            AdversaryStrategy::Column { index: mm.col },
            mm.value,
            true,
            Vec::new(),
        ),
        rec(
            GameKind::G3,
            ClassifierStrategy::MixedRows {
                weights: mixed.row_mix,
            },
            AdversaryStrategy::MixedColumns {
                weights: mixed.col_mix,
            },
            mixed.value,
            mixed.converged,
            trace,
        ),
        rec(
            GameKind::G2,
            ClassifierStrategy::Row { index: xm.row },
            AdversaryStrategy::Column { index: xm.col },
            xm.value,
            true,
            Vec::new(),
        ),
    ])
}
