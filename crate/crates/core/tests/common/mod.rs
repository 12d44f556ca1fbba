//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackgame::losses::LossKind;
use stackgame::net::Network;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7e57)
}

/// Straight-line evaluation from the serialized weights, no shared code with
/// the library's forward pass.
pub fn forward_oracle(net: &Network, x: &[f64]) -> Vec<f64> {
    let dims = net.layer_dims();
    let mut a = x.to_vec();
    for (l, layer) in net.layers().iter().enumerate() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let mut z = vec![0.0; n_out];
        for i in 0..n_out {
            let mut s = layer.bias[i];
            for j in 0..n_in {
                s += layer.weights[i * n_in + j] * a[j];
            }
            z[i] = s;
        }
        if l + 1 < net.depth() {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        a = z;
    }
    a
}

pub fn loss_oracle(kind: LossKind, z: &[f64], y: usize) -> f64 {
    match kind {
        LossKind::Mse => z
            .iter()
            .enumerate()
            .map(|(i, v)| (v - if i == y { 1.0 } else { 0.0 }).powi(2))
            .sum(),
        LossKind::Ce => {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[y]
        }
        LossKind::Cw => {
            let other = (0..z.len())
                .filter(|&l| l != y)
                .map(|l| z[l])
                .fold(f64::NEG_INFINITY, f64::max);
            other - z[y]
        }
        LossKind::Adv01 => {
            if loss_oracle(LossKind::Cw, z, y) >= 0.0 {
                0.0
            } else {
                -1.0
            }
        }
    }
}

pub fn random_net(rng: &mut impl Rng, dims: &[usize], scale: f64) -> Network {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        weights.push((0..w[0] * w[1]).map(|_| rng.gen_range(-scale..scale)).collect());
        biases.push((0..w[1]).map(|_| rng.gen_range(-scale..scale)).collect());
    }
    Network::from_parts(dims, weights, biases, 10.0 * scale.max(1.0), 0).unwrap()
}

pub fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences of `f` at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Smallest distance from any pre-activation of `x` to zero; finite
/// differences with step below this do not cross a ReLU kink.
pub fn kink_margin(net: &Network, x: &[f64]) -> f64 {
    let dims = net.layer_dims();
    let mut a = x.to_vec();
    let mut margin = f64::INFINITY;
    for (l, layer) in net.layers().iter().enumerate() {
        let n_in = dims[l];
        let mut z: Vec<f64> = (0..dims[l + 1])
            .map(|i| layer.bias[i] + (0..n_in).map(|j| layer.weights[i * n_in + j] * a[j]).sum::<f64>())
            .collect();
        if l + 1 < net.depth() {
            for v in &mut z {
                margin = margin.min(v.abs());
                *v = v.max(0.0);
            }
        }
        a = z;
    }
    margin
}

/// Points `-eps, -eps + h, ...` plus the endpoint `eps`.
pub fn lattice_oracle(eps: f64, h: f64) -> Vec<f64> {
    if eps == 0.0 {
        return vec![0.0];
    }
    let mut v = Vec::new();
    let mut k = 0;
    loop {
        let t = -eps + k as f64 * h;
        if t >= eps - 1e-12 {
            break;
        }
        v.push(t);
        k += 1;
    }
    v.push(eps);
    v
}

/// Maximum of `loss(C(x + d), y)` over the product lattice, by nested loops.
pub fn grid_max_oracle(net: &Network, x: &[f64], y: usize, eps: f64, h: f64, loss: LossKind) -> f64 {
    let pts = lattice_oracle(eps, h);
    let n = x.len();
    let mut best = f64::NEG_INFINITY;
    let total = pts.len().pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut xp = x.to_vec();
        for v in xp.iter_mut() {
            *v += pts[c % pts.len()];
            c /= pts.len();
        }
        best = best.max(loss_oracle(loss, &forward_oracle(net, &xp), y));
    }
    best
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

/// Equalizing mixture over `support` against `targets`: weights `w` with
/// `sum_s w_s a(s, t) = v` for every target and `sum w = 1`.
fn equalizer(a: impl Fn(usize, usize) -> f64, support: &[usize], targets: &[usize]) -> Option<(Vec<f64>, f64)> {
    let k = support.len();
    let mut m = vec![vec![0.0; k + 1]; k + 1];
    let mut rhs = vec![0.0; k + 1];
    for (r, &t) in targets.iter().enumerate() {
        for (c, &s) in support.iter().enumerate() {
            m[r][c] = a(s, t);
        }
        m[r][k] = -1.0;
    }
    for c in 0..k {
        m[k][c] = 1.0;
    }
    rhs[k] = 1.0;
    let sol = solve_linear(m, rhs)?;
    Some((sol[..k].to_vec(), sol[k]))
}

/// Zero-sum value (row player minimizes) by exhaustive support enumeration.
/// Returns `(p, q, value)`; panics if no equilibrium is found, which only
/// happens on degenerate matrices.
pub fn support_enumeration(m: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, f64) {
    let (r, c) = (m.len(), m[0].len());
    let tol = 1e-9;
    for k in 1..=r.min(c) {
        for rs in subsets(r, k) {
            for cs in subsets(c, k) {
                let Some((pw, v1)) = equalizer(|i, j| m[i][j], &rs, &cs) else { continue };
                let Some((qw, v2)) = equalizer(|j, i| m[i][j], &cs, &rs) else { continue };
                if pw.iter().chain(&qw).any(|&w| w < -tol) || (v1 - v2).abs() > 1e-7 {
                    continue;
                }
                let mut p = vec![0.0; r];
                let mut q = vec![0.0; c];
                for (&i, &w) in rs.iter().zip(&pw) {
                    p[i] = w.max(0.0);
                }
                for (&j, &w) in cs.iter().zip(&qw) {
                    q[j] = w.max(0.0);
                }
                let col_best = (0..c).map(|j| (0..r).map(|i| p[i] * m[i][j]).sum::<f64>()).fold(f64::NEG_INFINITY, f64::max);
                let row_best = (0..r).map(|i| (0..c).map(|j| m[i][j] * q[j]).sum::<f64>()).fold(f64::INFINITY, f64::min);
                if col_best <= v1 + 1e-7 && row_best >= v1 - 1e-7 {
                    return (p, q, v1);
                }
            }
        }
    }
    panic!("support enumeration found no equilibrium for {m:?}");
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Vec<Vec<f64>> {
    (0..r).map(|_| random_vec(rng, c, -1.0, 1.0)).collect()
}

pub fn pure_minmax(m: &[Vec<f64>]) -> f64 {
    m.iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min)
}

pub fn pure_maxmin(m: &[Vec<f64>]) -> f64 {
    (0..m[0].len())
        .map(|j| m.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One random `(net, x, y, loss)` draw checked against central differences.
/// Draws too close to a ReLU kink are re-sampled.
pub fn gradient_check_once(r: &mut impl Rng, loss: LossKind) -> f64 {
    let h = 1e-5;
    loop {
        let depth = r.gen_range(1..4);
        let mut dims = vec![r.gen_range(1..4)];
        for _ in 1..depth {
            dims.push(r.gen_range(2..6));
        }
        dims.push(r.gen_range(2..4));
        let net = random_net(r, &dims, 1.0);
        let x = random_vec(r, dims[0], 0.0, 1.0);
        if kink_margin(&net, &x) < 1e-3 {
            continue;
        }
        let z = forward_oracle(&net, &x);
        let y = r.gen_range(0..z.len());
        if loss == LossKind::Cw {
            let mut s = z.clone();
            s.sort_by(f64::total_cmp);
            if s[s.len() - 1] - s[s.len() - 2] < 1e-3 {
                continue;
            }
        }
        let g = net.gradients(&x, y, loss).unwrap();
        let fx = |xx: &[f64]| loss_oracle(loss, &forward_oracle(&net, xx), y);
        let mut worst: f64 = 0.0;
        for (a, b) in g.wrt_input.iter().zip(central_diff(fx, &x, h)) {
            worst = worst.max(rel_err(*a, b));
        }
        let theta = net.params();
        let fp = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            loss_oracle(loss, &forward_oracle(&n, &x), y)
        };
        for (a, b) in g.wrt_params.iter().zip(central_diff(fp, &theta, h)) {
            worst = worst.max(rel_err(*a, b));
        }
        assert!((g.loss_value - fx(&x)).abs() < 1e-12);
        return worst;
    }
}
