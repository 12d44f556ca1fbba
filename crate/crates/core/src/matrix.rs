//! Finite two-player zero-sum games.
//!
//! Rows belong to the minimizing player (the Classifier), columns to the
//! maximizing player (the Adversary). Ties are broken towards the lowest
//! index everywhere.
//!
//! Mixed equilibria come from simultaneous fictitious play. Its duality gap
//! `max_j (p^T M)_j - min_i (M q)_i` bounds the distance of the empirical
//! mixtures `(p, q)` from equilibrium. Because plain fictitious play closes
//! the gap slowly, the solver periodically guesses the equilibrium supports
//! from the current near-best responses and solves the equalizing linear
//! systems on them; such a candidate is accepted only when its own gap over
//! the full matrix is within tolerance, so every returned solution carries
//! the same certificate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGame {
    rows: usize,
    cols: usize,
    payoff: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PureSolution {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub iteration: usize,
    /// `min_i (M q)_i`: the best the row player can do against `q`.
    pub lower: f64,
    /// `max_j (p^T M)_j`: the best the column player can do against `p`.
    pub upper: f64,
}

impl GapPoint {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSolution {
    pub row_mix: Vec<f64>,
    pub col_mix: Vec<f64>,
    /// `p^T M q`.
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the returned mixtures came from support polishing.
    pub polished: bool,
    pub trace: Vec<GapPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FictitiousPlayConfig {
    pub tol: f64,
    pub max_iterations: usize,
    /// Attempt support polishing every this many iterations (0 disables).
    pub polish_every: usize,
}

impl Default for FictitiousPlayConfig {
    fn default() -> Self {
        FictitiousPlayConfig {
            tol: 1e-6,
            max_iterations: 2_000_000,
            polish_every: 64,
        }
    }
}

impl FictitiousPlayConfig {
    pub fn with_tol(tol: f64) -> Self {
        FictitiousPlayConfig {
            tol,
            ..Default::default()
        }
    }
}

impl MatrixGame {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::Validation("payoff matrix has no rows".into()));
        }
        let c = rows[0].len();
        if c == 0 {
            return Err(Error::Validation("payoff matrix has no columns".into()));
        }
        if let Some(i) = rows.iter().position(|row| row.len() != c) {
            return Err(Error::Validation(format!(
                "row {i} has {} entries, expected {c}",
                rows[i].len()
            )));
        }
        let payoff: Vec<f64> = rows.into_iter().flatten().collect();
        if payoff.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("payoff entries must be finite".into()));
        }
        Ok(MatrixGame {
            rows: r,
            cols: c,
            payoff,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.payoff[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.payoff[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> MatrixGame {
        MatrixGame::new(
            (0..self.cols)
                .map(|j| (0..self.rows).map(|i| self.get(i, j)).collect())
                .collect(),
        )
        .unwrap()
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.iter().all(str::is_empty) {
                continue;
            }
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("not a number: `{f}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "no matrix rows".into(),
            });
        }
        MatrixGame::new(rows)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MatrixGame::parse_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// `p^T M q`.
    pub fn mixed_payoff(&self, p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .enumerate()
            .map(|(i, &pi)| pi * self.row(i).iter().zip(q).map(|(m, qj)| m * qj).sum::<f64>())
            .sum()
    }

    /// `(min_i (M q)_i, max_j (p^T M)_j)`.
    pub fn response_bounds(&self, p: &[f64], q: &[f64]) -> (f64, f64) {
        let lower = (0..self.rows)
            .map(|i| self.row(i).iter().zip(q).map(|(m, qj)| m * qj).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let upper = (0..self.cols)
            .map(|j| (0..self.rows).map(|i| p[i] * self.get(i, j)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        (lower, upper)
    }
}

fn argmin(v: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, x) in v.enumerate() {
        if x < best.1 {
            best = (i, x);
        }
    }
    best
}

fn argmax(v: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// Row player leads: `min_i max_j M[i][j]`.
pub fn matrix_minmax(g: &MatrixGame) -> PureSolution {
    let (row, value) = argmin((0..g.rows).map(|i| argmax(g.row(i).iter().copied()).1));
    let (col, _) = argmax(g.row(row).iter().copied());
    PureSolution { row, col, value }
}

/// Column player leads: `max_j min_i M[i][j]`.
pub fn matrix_maxmin(g: &MatrixGame) -> PureSolution {
    let (col, value) = argmax((0..g.cols).map(|j| argmin((0..g.rows).map(|i| g.get(i, j))).1));
    let (row, _) = argmin((0..g.rows).map(|i| g.get(i, col)));
    PureSolution { row, col, value }
}

/// Mixed equilibrium by fictitious play with support polishing.
pub fn matrix_mixed(g: &MatrixGame, tol: f64) -> Result<MixedSolution> {
    fictitious_play(g, &FictitiousPlayConfig::with_tol(tol))
}

pub fn fictitious_play(g: &MatrixGame, cfg: &FictitiousPlayConfig) -> Result<MixedSolution> {
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {}",
            cfg.tol
        )));
    }
    let (r, c) = (g.rows, g.cols);
    let mut row_counts = vec![0u64; r];
    let mut col_counts = vec![0u64; c];
    // row_sums[i] = sum_t M[i][j_t]; col_sums[j] = sum_t M[i_t][j]
    let mut row_sums = vec![0.0; r];
    let mut col_sums = vec![0.0; c];
    let (mut i_t, mut j_t) = (0usize, 0usize);
    let mut trace = Vec::new();
    let mut next_log = 1usize;

    let mixes = |rc: &[u64], cc: &[u64], t: usize| -> (Vec<f64>, Vec<f64>) {
        (
            rc.iter().map(|&n| n as f64 / t as f64).collect(),
            cc.iter().map(|&n| n as f64 / t as f64).collect(),
        )
    };

    for t in 1..=cfg.max_iterations {
        row_counts[i_t] += 1;
        col_counts[j_t] += 1;
        for (i, s) in row_sums.iter_mut().enumerate() {
            *s += g.get(i, j_t);
        }
        for (s, &m) in col_sums.iter_mut().zip(g.row(i_t)) {
            *s += m;
        }
        let (bi, lo) = argmin(row_sums.iter().copied());
        let (bj, hi) = argmax(col_sums.iter().copied());
        let point = GapPoint {
            iteration: t,
            lower: lo / t as f64,
            upper: hi / t as f64,
        };
        if t == next_log || point.gap() <= cfg.tol {
            trace.push(point);
            next_log = (next_log * 2).max(t + 1);
        }
        if point.gap() <= cfg.tol {
            let (p, q) = mixes(&row_counts, &col_counts, t);
            return Ok(MixedSolution {
                value: g.mixed_payoff(&p, &q),
                row_mix: p,
                col_mix: q,
                gap: point.gap(),
                iterations: t,
                converged: true,
                polished: false,
                trace,
            });
        }
        if cfg.polish_every > 0 && t % cfg.polish_every == 0 {
            let (p, q) = mixes(&row_counts, &col_counts, t);
            if let Some((pp, qq, gap)) = polish(g, &p, &q, &row_sums, &col_sums, t, cfg.tol) {
                let (lower, upper) = g.response_bounds(&pp, &qq);
                trace.push(GapPoint {
                    iteration: t,
                    lower,
                    upper,
                });
                return Ok(MixedSolution {
                    value: g.mixed_payoff(&pp, &qq),
                    row_mix: pp,
                    col_mix: qq,
                    gap,
                    iterations: t,
                    converged: true,
                    polished: true,
                    trace,
                });
            }
        }
        i_t = bi;
        j_t = bj;
    }
    let t = cfg.max_iterations;
    let (p, q) = mixes(&row_counts, &col_counts, t);
    let (lower, upper) = g.response_bounds(&p, &q);
    trace.push(GapPoint {
        iteration: t,
        lower,
        upper,
    });
    Ok(MixedSolution {
        value: g.mixed_payoff(&p, &q),
        row_mix: p,
        col_mix: q,
        gap: upper - lower,
        iterations: t,
        converged: false,
        polished: false,
        trace,
    })
}

const FULL_ENUMERATION_LIMIT: usize = 5;

/// Tries to turn the current fictitious-play state into an exact equilibrium
/// by solving equalizer systems on candidate supports.
fn polish(
    g: &MatrixGame,
    p: &[f64],
    q: &[f64],
    row_sums: &[f64],
    col_sums: &[f64],
    t: usize,
    tol: f64,
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let tf = t as f64;
    let lo = row_sums.iter().copied().fold(f64::INFINITY, f64::min) / tf;
    let hi = col_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tf;
    let slack = 2.0 * (hi - lo).max(0.0) + 1e-12;
    // near-best responses, ordered by empirical weight
    let mut rows: Vec<usize> = (0..g.rows)
        .filter(|&i| row_sums[i] / tf <= lo + slack)
        .collect();
    let mut cols: Vec<usize> = (0..g.cols)
        .filter(|&j| col_sums[j] / tf >= hi - slack)
        .collect();
    rows.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    cols.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));

    let try_support = |rs: &[usize], cs: &[usize]| -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let (pp, qq) = equalize(g, rs, cs)?;
        let (lower, upper) = g.response_bounds(&pp, &qq);
        let gap = upper - lower;
        (gap <= tol).then_some((pp, qq, gap.max(0.0)))
    };

    let k_max = rows.len().min(cols.len());
    for k in 1..=k_max {
        let mut rs = rows[..k].to_vec();
        let mut cs = cols[..k].to_vec();
        rs.sort_unstable();
        cs.sort_unstable();
        if let Some(found) = try_support(&rs, &cs) {
            return Some(found);
        }
    }
    if rows.len() <= FULL_ENUMERATION_LIMIT && cols.len() <= FULL_ENUMERATION_LIMIT {
        let mut rows = rows;
        let mut cols = cols;
        rows.sort_unstable();
        cols.sort_unstable();
        for k in 1..=k_max {
            for rs in subsets(&rows, k) {
                for cs in subsets(&cols, k) {
                    if let Some(found) = try_support(&rs, &cs) {
                        return Some(found);
                    }
                }
            }
        }
    }
    None
}

fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Mixtures supported on `rs` x `cs` that make the opponent indifferent over
/// the other support; `None` if singular or not a probability vector.
fn equalize(g: &MatrixGame, rs: &[usize], cs: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = rs.len();
    // column mix: sum_j M[i][j] q_j - v = 0 for i in rs, sum q = 1
    let mut a = vec![vec![0.0; k + 1]; k + 1];
    let mut b = vec![0.0; k + 1];
    for (r, &i) in rs.iter().enumerate() {
        for (c, &j) in cs.iter().enumerate() {
            a[r][c] = g.get(i, j);
        }
        a[r][k] = -1.0;
    }
    a[k][..k].iter_mut().for_each(|v| *v = 1.0);
    b[k] = 1.0;
    let qs = solve_linear(a, b)?;
    // row mix: sum_i p_i M[i][j] - v = 0 for j in cs, sum p = 1
    let mut a = vec![vec![0.0; k + 1]; k + 1];
    let mut b = vec![0.0; k + 1];
    for (c, &j) in cs.iter().enumerate() {
        for (r, &i) in rs.iter().enumerate() {
            a[c][r] = g.get(i, j);
        }
        a[c][k] = -1.0;
    }
    a[k][..k].iter_mut().for_each(|v| *v = 1.0);
    b[k] = 1.0;
    let ps = solve_linear(a, b)?;

    let to_mix = |support: &[usize], weights: &[f64], len: usize| -> Option<Vec<f64>> {
        let mut mix = vec![0.0; len];
        for (&s, &w) in support.iter().zip(weights) {
            if w < -1e-12 {
                return None;
            }
            mix[s] = w.max(0.0);
        }
        let total: f64 = mix.iter().sum();
        if total <= 0.0 {
            return None;
        }
        mix.iter_mut().for_each(|v| *v /= total);
        Some(mix)
    };
    Some((to_mix(rs, &ps[..k], g.rows)?, to_mix(cs, &qs[..k], g.cols)?))
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
