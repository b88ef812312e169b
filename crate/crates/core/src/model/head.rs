//! Dense head: pooled features -> Dense(units, ReLU) -> Dense(classes) -> softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Scalar};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub input_dim: usize,
    pub units: usize,
    pub classes: usize,
    /// Row-major `[units][input_dim]`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `[classes][units]`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Result of a weighted cross-entropy evaluation over a batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// `sum_i w_i * -ln p_i[y_i] / n`.
    pub loss: f64,
    pub probabilities: Vec<Vec<f64>>,
    pub grads: HeadGrads,
    /// Gradient of the loss with respect to each input row.
    pub input_grads: Vec<Vec<f64>>,
}

/// ReLU that lets NaN through, so divergence stays visible.
fn relu(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(logits)[target]` without forming the probability.
fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

impl Head {
    pub fn zeros(input_dim: usize, units: usize, classes: usize) -> Self {
        Head {
            input_dim,
            units,
            classes,
            w1: vec![0.0; units * input_dim],
            b1: vec![0.0; units],
            w2: vec![0.0; classes * units],
            b2: vec![0.0; classes],
        }
    }

    /// Uniform fan-in initialization: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
    /// biases zero.
    pub fn init(input_dim: usize, units: usize, classes: usize, seed: u64) -> Self {
        let mut head = Head::zeros(input_dim, units, classes);
        let mut rng = rng_from(seed);
        let l1 = (6.0 / input_dim as f64).sqrt();
        for w in &mut head.w1 {
            *w = rng.random_range(-l1..l1);
        }
        let l2 = (6.0 / units as f64).sqrt();
        for w in &mut head.w2 {
            *w = rng.random_range(-l2..l2);
        }
        head
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.b1.clone();
        for (u, out) in h.iter_mut().enumerate() {
            let row = &self.w1[u * self.input_dim..(u + 1) * self.input_dim];
            *out += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        h
    }

    fn logits_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        let mut z = self.b2.clone();
        for (k, out) in z.iter_mut().enumerate() {
            let row = &self.w2[k * self.units..(k + 1) * self.units];
            *out += row.iter().zip(hidden).map(|(w, v)| w * v).sum::<f64>();
        }
        z
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = self.hidden_pre(x).into_iter().map(relu).collect();
        self.logits_from_hidden(&hidden)
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Weighted cross-entropy and its gradients on a batch. `weights[i]` is
    /// the class weight of sample `i`.
    pub fn loss_and_grads(&self, inputs: &[&[f64]], targets: &[usize], weights: &[f64]) -> BatchLoss {
        let n = inputs.len();
        assert!(n > 0 && targets.len() == n && weights.len() == n, "batch shape mismatch");
        let (d, u, k) = (self.input_dim, self.units, self.classes);

        let mut x = Vec::with_capacity(n * d);
        for row in inputs {
            assert_eq!(row.len(), d, "input width mismatch");
            x.extend_from_slice(row);
        }
        // Hidden pre-activations [n][u] = x · w1ᵀ + b1.
        let mut pre = vec![0.0; n * u];
        for row in pre.chunks_exact_mut(u) {
            row.copy_from_slice(&self.b1);
        }
        matmul(n, d, u, &x, false, &self.w1, true, &mut pre, true);
        let hidden: Vec<f64> = pre.iter().copied().map(relu).collect();
        let mut logits = vec![0.0; n * k];
        for row in logits.chunks_exact_mut(k) {
            row.copy_from_slice(&self.b2);
        }
        matmul(n, u, k, &hidden, false, &self.w2, true, &mut logits, true);

        let mut loss = 0.0;
        let mut probabilities = Vec::with_capacity(n);
        // dL/dlogits [n][k].
        let mut g_logits = vec![0.0; n * k];
        for i in 0..n {
            let z = &logits[i * k..(i + 1) * k];
            loss += weights[i] * cross_entropy(z, targets[i]);
            let p = softmax(z);
            for c in 0..k {
                let onehot = if c == targets[i] { 1.0 } else { 0.0 };
                g_logits[i * k + c] = weights[i] * (p[c] - onehot) / n as f64;
            }
            probabilities.push(p);
        }
        loss /= n as f64;

        let mut gw2 = vec![0.0; k * u];
        matmul(k, n, u, &g_logits, true, &hidden, false, &mut gw2, false);
        let gb2: Vec<f64> = (0..k).map(|c| (0..n).map(|i| g_logits[i * k + c]).sum()).collect();

        let mut g_hidden = vec![0.0; n * u];
        matmul(n, k, u, &g_logits, false, &self.w2, false, &mut g_hidden, false);
        for (g, p) in g_hidden.iter_mut().zip(&pre) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
        let mut gw1 = vec![0.0; u * d];
        matmul(u, n, d, &g_hidden, true, &x, false, &mut gw1, false);
        let gb1: Vec<f64> = (0..u).map(|j| (0..n).map(|i| g_hidden[i * u + j]).sum()).collect();

        let mut gx = vec![0.0; n * d];
        matmul(n, u, d, &g_hidden, false, &self.w1, false, &mut gx, false);
        let input_grads = gx.chunks_exact(d).map(<[f64]>::to_vec).collect();

        BatchLoss { loss, probabilities, grads: HeadGrads { w1: gw1, b1: gb1, w2: gw2, b2: gb2 }, input_grads }
    }

    /// Loss only, for validation and finite differences.
    pub fn loss(&self, inputs: &[&[f64]], targets: &[usize], weights: &[f64]) -> f64 {
        let n = inputs.len() as f64;
        inputs
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((x, &t), &w)| w * cross_entropy(&self.logits(x), t))
            .sum::<f64>()
            / n
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl HeadGrads {
    pub(crate) fn as_slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

/// Adam with bias correction. One moment buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-7, step: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Adam {
    /// Starts a new optimizer step; call once before the `update` calls of
    /// that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates parameter tensor `slot` in place.
    pub fn update<T: Scalar>(&mut self, slot: usize, lr: f64, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), grads.len());
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].len() != params.len() {
            self.m[slot] = vec![0.0; params.len()];
            self.v[slot] = vec![0.0; params.len()];
        }
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..params.len() {
            let g = grads[i].to_f64();
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            let p = params[i].to_f64() - lr * m_hat / (v_hat.sqrt() + self.eps);
            params[i] = T::from_f64(p);
        }
    }
}
