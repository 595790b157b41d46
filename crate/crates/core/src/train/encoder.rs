use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AspectId, EmbeddingVector};

/// Affine map `x -> W x + b`, weights stored row-major `[d_out][d_in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEncoder {
    d_in: usize,
    d_out: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearEncoder {
    pub fn new(d_in: usize, d_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != d_in * d_out {
            return Err(Error::DimensionMismatch { expected: d_in * d_out, got: weight.len() });
        }
        if bias.len() != d_out {
            return Err(Error::DimensionMismatch { expected: d_out, got: bias.len() });
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(LinearEncoder { d_in, d_out, weight, bias })
    }

    /// Gaussian weights with variance `1 / d_in`, zero bias.
    pub fn random<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / d_in as f64).sqrt()).expect("positive std");
        let weight = (0..d_in * d_out).map(|_| normal.sample(rng)).collect();
        LinearEncoder { d_in, d_out, weight, bias: vec![0.0; d_out] }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.d_in)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub(crate) fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Weights then biases, in one flat vector.
    pub(crate) fn params(&self) -> Vec<f64> {
        self.weight.iter().chain(&self.bias).copied().collect()
    }

    pub(crate) fn set_params(&mut self, flat: &[f64]) {
        let (w, b) = flat.split_at(self.weight.len());
        self.weight.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }

    /// Weights decay, biases do not.
    pub(crate) fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![true; self.weight.len()];
        m.resize(self.param_count(), false);
        m
    }

    /// Adds this sample's parameter gradient into `grad` (flat, same layout
    /// as [`params`](Self::params)) and returns the gradient w.r.t. `x`.
    pub(crate) fn backward(&self, x: &[f64], grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (gw, gb) = grad.split_at_mut(self.weight.len());
        let mut grad_in = vec![0.0; self.d_in];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let row = &self.weight[o * self.d_in..(o + 1) * self.d_in];
            let grow = &mut gw[o * self.d_in..(o + 1) * self.d_in];
            for k in 0..self.d_in {
                grow[k] += g * x[k];
                grad_in[k] += g * row[k];
            }
        }
        grad_in
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        if self == Activation::Tanh {
            v.iter_mut().for_each(|x| *x = x.tanh());
        }
    }

    /// Scales `grad` by the derivative, given the activation's output.
    fn backprop(self, output: &[f64], grad: &mut [f64]) {
        if self == Activation::Tanh {
            grad.iter_mut().zip(output).for_each(|(g, y)| *g *= 1.0 - y * y);
        }
    }
}

/// A stack of affine layers with an activation between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub layers: Vec<LinearEncoder>,
    pub activation: Activation,
}

impl FeatureEncoder {
    /// One layer `d_in -> d_out`, or two with a tanh hidden layer of `hidden` units.
    pub fn random<R: Rng>(d_in: usize, d_out: usize, hidden: Option<usize>, rng: &mut R) -> Self {
        match hidden {
            None => FeatureEncoder { layers: vec![LinearEncoder::random(d_in, d_out, rng)], activation: Activation::Identity },
            Some(h) => FeatureEncoder {
                layers: vec![LinearEncoder::random(d_in, h, rng), LinearEncoder::random(h, d_out, rng)],
                activation: Activation::Tanh,
            },
        }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().expect("at least one layer").d_out
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).pop().expect("trace has output")
    }

    pub fn encode(&self, x: &[f64]) -> Result<EmbeddingVector> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch { expected: self.d_in(), got: x.len() });
        }
        EmbeddingVector::new(self.forward(x))
    }

    /// Input to every layer followed by the final output.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().expect("nonempty"));
            if i + 1 < self.layers.len() {
                self.activation.apply(&mut y);
            }
            acts.push(y);
        }
        acts
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LinearEncoder::param_count).sum()
    }

    pub(crate) fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(LinearEncoder::params).collect()
    }

    pub(crate) fn set_params(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.param_count();
            l.set_params(&flat[at..at + n]);
            at += n;
        }
    }

    pub(crate) fn decay_mask(&self) -> Vec<bool> {
        self.layers.iter().flat_map(LinearEncoder::decay_mask).collect()
    }

    /// Forward pass returning what [`backward`](Self::backward) needs.
    pub(crate) fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.trace(x)
    }

    pub(crate) fn backward(&self, trace: &[Vec<f64>], grad_out: &[f64], grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.param_count();
        }
        let mut g = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let slot = &mut grad[offsets[i]..offsets[i] + layer.param_count()];
            g = layer.backward(&trace[i], &g, slot);
            if i > 0 {
                self.activation.backprop(&trace[i], &mut g);
            }
        }
    }
}

/// A shared trunk followed by one affine head per aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedEncoder {
    pub trunk: LinearEncoder,
    pub activation: Activation,
    pub heads: BTreeMap<AspectId, LinearEncoder>,
}

impl UnifiedEncoder {
    pub fn new(trunk: LinearEncoder, activation: Activation, heads: BTreeMap<AspectId, LinearEncoder>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Degenerate("unified encoder needs at least one head".into()));
        }
        if let Some(h) = heads.values().find(|h| h.d_in != trunk.d_out) {
            return Err(Error::DimensionMismatch { expected: trunk.d_out, got: h.d_in });
        }
        Ok(UnifiedEncoder { trunk, activation, heads })
    }

    pub fn random<R: Rng>(
        d_in: usize,
        hidden: usize,
        outputs: &BTreeMap<AspectId, usize>,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let trunk = LinearEncoder::random(d_in, hidden, rng);
        let heads = outputs.iter().map(|(a, &d)| (a.clone(), LinearEncoder::random(hidden, d, rng))).collect();
        UnifiedEncoder { trunk, activation, heads }
    }

    pub fn aspects(&self) -> impl Iterator<Item = &AspectId> {
        self.heads.keys()
    }

    pub(crate) fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.trunk.forward(x);
        self.activation.apply(&mut h);
        h
    }

    /// Predicted embedding for one aspect.
    pub fn predict(&self, x: &[f64], aspect: &AspectId) -> Result<EmbeddingVector> {
        let head = self.heads.get(aspect).ok_or_else(|| Error::UnknownAspect(aspect.to_string()))?;
        if x.len() != self.trunk.d_in {
            return Err(Error::DimensionMismatch { expected: self.trunk.d_in, got: x.len() });
        }
        EmbeddingVector::new(head.forward(&self.hidden(x)))
    }

    /// Predictions for every aspect in one pass over the trunk.
    pub fn predict_all(&self, x: &[f64]) -> Result<BTreeMap<AspectId, EmbeddingVector>> {
        if x.len() != self.trunk.d_in {
            return Err(Error::DimensionMismatch { expected: self.trunk.d_in, got: x.len() });
        }
        let h = self.hidden(x);
        self.heads.iter().map(|(a, head)| Ok((a.clone(), EmbeddingVector::new(head.forward(&h))?))).collect()
    }

    pub(crate) fn backprop_hidden(&self, hidden: &[f64], grad: &mut [f64]) {
        self.activation.backprop(hidden, grad);
    }
}
