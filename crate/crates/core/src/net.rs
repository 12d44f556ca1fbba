//! Fully connected ReLU classifiers.
//!
//! A [`Network`] with layer dimensions `n_0, ..., n_D` computes
//! `x_l = relu(W_l x_{l-1} + b_l)` for the hidden layers and an affine final
//! layer producing `n_D` logits. Parameters are flattened layer by layer,
//! weights row-major followed by the bias, and live in the cube `[-E, E]^K`
//! once projected.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::rng::{child_rng, streams};

/// One affine layer; `weights` is row-major with shape `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.in_dim..(i + 1) * self.in_dim]
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|i| dot(self.row(i), x) + self.bias[i])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Serialized through [`ModelFile`](crate::io::ModelFile).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "crate::io::ModelFile", try_from = "crate::io::ModelFile")]
pub struct Network {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    clip_bound: f64,
    seed: u64,
}

/// Loss value with its gradients w.r.t. the flattened parameters and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPack {
    pub wrt_params: Vec<f64>,
    pub wrt_input: Vec<f64>,
    pub loss_value: f64,
}

fn check_dims(layer_dims: &[usize], clip_bound: f64) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArchitecture(
            "need at least an input and an output dimension".into(),
        ));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArchitecture(format!(
            "layer dimensions must be positive: {layer_dims:?}"
        )));
    }
    if !(clip_bound > 0.0 && clip_bound.is_finite()) {
        return Err(Error::InvalidArchitecture(format!(
            "clip bound must be positive and finite, got {clip_bound}"
        )));
    }
    Ok(())
}

impl Network {
    /// All-zero network.
    pub fn zeros(layer_dims: &[usize], clip_bound: f64) -> Result<Self> {
        check_dims(layer_dims, clip_bound)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Network {
            layer_dims: layer_dims.to_vec(),
            layers,
            clip_bound,
            seed: 0,
        })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization, projected
    /// onto the parameter cube.
    pub fn random(layer_dims: &[usize], clip_bound: f64, seed: u64) -> Result<Self> {
        let mut net = Network::zeros(layer_dims, clip_bound)?;
        net.seed = seed;
        let mut rng = child_rng(seed, streams::INIT);
        for layer in &mut net.layers {
            let r = 1.0 / (layer.in_dim as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.gen_range(-r..=r);
            }
        }
        net.project_in_place();
        Ok(net)
    }

    /// Builds a network from explicit per-layer weights (row-major) and
    /// biases. Parameters are stored as given, without projection.
    pub fn from_parts(
        layer_dims: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        clip_bound: f64,
        seed: u64,
    ) -> Result<Self> {
        check_dims(layer_dims, clip_bound)?;
        let depth = layer_dims.len() - 1;
        if weights.len() != depth || biases.len() != depth {
            return Err(Error::InvalidArchitecture(format!(
                "expected {depth} weight and bias blocks, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (i, o) = (layer_dims[l], layer_dims[l + 1]);
            if w.len() != i * o || b.len() != o {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {l}: expected {o}x{i} weights and {o} biases, got {} and {}",
                    w.len(),
                    b.len()
                )));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {l}: non-finite parameter"
                )));
            }
            layers.push(Layer {
                in_dim: i,
                out_dim: o,
                weights: w,
                bias: b,
            });
        }
        Ok(Network {
            layer_dims: layer_dims.to_vec(),
            layers,
            clip_bound,
            seed,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of affine layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.params_iter().copied().collect()
    }

    pub fn params_iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let k = self.param_count();
        if params.len() != k {
            return Err(Error::InputShape {
                expected: k,
                got: params.len(),
            });
        }
        for (p, &v) in self.params_iter_mut().zip(params) {
            *p = v;
        }
        Ok(())
    }

    /// Clamps every parameter to `[-E, E]`.
    pub fn project_in_place(&mut self) {
        let e = self.clip_bound;
        for p in self.params_iter_mut() {
            *p = p.clamp(-e, e);
        }
    }

    pub fn project_params(&self) -> Network {
        let mut out = self.clone();
        out.project_in_place();
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.affine(&h);
            if l < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// Inputs to each layer: `z_0 = x, z_1, ..., z_{D-1}`.
    pub fn layer_inputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut next = layer.affine(&h);
            relu_in_place(&mut next);
            out.push(std::mem::replace(&mut h, next));
        }
        out.push(h);
        Ok(out)
    }

    /// Zero-based index of the largest logit; ties go to the smallest index.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Exact reverse-mode gradients of `loss(C(x), y)`, using `relu'(0) = 0`.
    pub fn gradients(&self, x: &[f64], y: usize, loss: LossKind) -> Result<GradientPack> {
        if !loss.is_differentiable() {
            return Err(Error::NonDifferentiableLoss(loss.name()));
        }
        self.check_input(x)?;
        let depth = self.layers.len();
        // inputs[l] feeds layer l; pre[l] is its pre-activation
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(depth);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(depth);
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.affine(&h);
            let mut next = a.clone();
            if l + 1 < depth {
                relu_in_place(&mut next);
            }
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(a);
        }
        let loss_value = loss.eval(&h, y)?;
        let mut g_pre = loss.grad(&h, y)?;

        let mut wrt_params = vec![0.0; self.param_count()];
        let mut offset = wrt_params.len();
        let mut g_in = Vec::new();
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let k = layer.param_count();
            offset -= k;
            let (gw, gb) = wrt_params[offset..offset + k].split_at_mut(layer.weights.len());
            let input = &inputs[l];
            for (i, &g) in g_pre.iter().enumerate() {
                if g != 0.0 {
                    for (dst, &xi) in gw[i * layer.in_dim..(i + 1) * layer.in_dim]
                        .iter_mut()
                        .zip(input)
                    {
                        *dst = g * xi;
                    }
                }
                gb[i] = g;
            }
            g_in = vec![0.0; layer.in_dim];
            for (i, &g) in g_pre.iter().enumerate() {
                if g != 0.0 {
                    for (dst, &w) in g_in.iter_mut().zip(layer.row(i)) {
                        *dst += g * w;
                    }
                }
            }
            if l > 0 {
                g_pre = g_in
                    .iter()
                    .zip(&pre[l - 1])
                    .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
                    .collect();
            }
        }
        Ok(GradientPack {
            wrt_params,
            wrt_input: g_in,
            loss_value,
        })
    }

    /// Largest absolute parameter value.
    pub fn max_abs_param(&self) -> f64 {
        self.params_iter().fold(0.0, |m, p| m.max(p.abs()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Index of the maximum entry, smallest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Network::from_parts(
            &[2, 2],
            vec![vec![1.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0]],
            5.0,
            0,
        )
        .unwrap();
        assert_eq!(net.forward(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let net = Network::random(&[2, 4, 3], 1.0, 1).unwrap();
        assert!(matches!(
            net.forward(&[0.1]),
            Err(Error::InputShape {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn param_counts() {
        assert_eq!(Network::zeros(&[2, 4, 3], 1.0).unwrap().param_count(), 27);
        assert_eq!(Network::zeros(&[1, 1], 1.0).unwrap().param_count(), 2);
    }

    #[test]
    fn classify_tie_breaks_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.5]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn projection_clamps() {
        let mut net = Network::zeros(&[1, 2], 0.5).unwrap();
        net.set_params(&[1.5, -0.2, 0.1, -3.0]).unwrap();
        let p = net.project_params();
        assert_eq!(p.params(), vec![0.5, -0.2, 0.1, -0.5]);
        assert_eq!(p.project_params(), p);
    }

    #[test]
    fn init_respects_fan_in_and_clip() {
        let net = Network::random(&[16, 8, 2], 0.1, 3).unwrap();
        assert!(net.max_abs_param() <= 0.1);
        let wide = Network::random(&[4, 3], 10.0, 3).unwrap();
        assert!(wide.max_abs_param() <= 0.5);
    }

    #[test]
    fn adv01_gradient_is_rejected() {
        let net = Network::random(&[2, 3], 1.0, 0).unwrap();
        assert!(matches!(
            net.gradients(&[0.0, 0.0], 0, LossKind::Adv01),
            Err(Error::NonDifferentiableLoss(_))
        ));
    }

    #[test]
    fn zero_network_has_zero_input_gradient() {
        let net = Network::zeros(&[3, 4, 2], 1.0).unwrap();
        let g = net.gradients(&[0.0; 3], 0, LossKind::Mse).unwrap();
        assert!(g.wrt_input.iter().all(|&v| v == 0.0));
        assert_eq!(g.wrt_params.len(), net.param_count());
    }

    #[test]
    fn layer_inputs_chain() {
        let net = Network::random(&[2, 5, 4, 3], 1.0, 9).unwrap();
        let zs = net.layer_inputs(&[0.2, 0.8]).unwrap();
        assert_eq!(zs.len(), 3);
        assert_eq!(zs[0], vec![0.2, 0.8]);
        assert!(zs[1].iter().chain(&zs[2]).all(|&v| v >= 0.0));
        let last = &net.layers()[2];
        let out: Vec<f64> = (0..3)
            .map(|i| dot(last.row(i), &zs[2]) + last.bias[i])
            .collect();
        assert_eq!(out, net.forward(&[0.2, 0.8]).unwrap());
    }
}
