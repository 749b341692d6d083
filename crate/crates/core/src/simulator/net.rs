//! The small multi-head network used by the simulator.
//!
//! One tanh trunk layer is shared by every task; each task owns a scalar
//! linear head. The parameter vector layout (for [`Mlp::to_vec`] and the
//! sharpness subsets) is `w1 | b1 | heads | head_bias`, each block row-major.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

/// A depth-1 tanh trunk with per-task scalar heads, `f64` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub tasks: usize,
    /// Trunk weights, `hidden x input`, row-major.
    pub w1: Vec<f64>,
    /// Trunk biases, `hidden`.
    pub b1: Vec<f64>,
    /// Head weights, `tasks x hidden`, row-major.
    pub heads: Vec<f64>,
    /// Head biases, `tasks`.
    pub head_bias: Vec<f64>,
}

impl Mlp {
    /// All-zero network of the given shape.
    pub fn zeros(input: usize, hidden: usize, tasks: usize) -> Self {
        Mlp {
            input,
            hidden,
            tasks,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            heads: vec![0.0; tasks * hidden],
            head_bias: vec![0.0; tasks],
        }
    }

    /// Teacher draw: unit-normal trunk, `1/sqrt(hidden)` heads, zero head
    /// bias. Draw order is `w1`, `b1`, `heads`.
    pub fn teacher(input: usize, hidden: usize, stream: &mut ChaCha8Rng) -> Self {
        let mut net = Mlp::zeros(input, hidden, 1);
        for w in net.w1.iter_mut() {
            *w = rng::normal(stream);
        }
        for b in net.b1.iter_mut() {
            *b = rng::normal(stream);
        }
        let head_scale = 1.0 / (hidden as f64).sqrt();
        for h in net.heads.iter_mut() {
            *h = head_scale * rng::normal(stream);
        }
        net
    }

    /// Student draw: `1/sqrt(input)` trunk, `1/sqrt(hidden)` heads, zero
    /// biases. Draw order is `w1`, `heads`.
    pub fn student(input: usize, hidden: usize, tasks: usize, stream: &mut ChaCha8Rng) -> Self {
        let mut net = Mlp::zeros(input, hidden, tasks);
        let trunk_scale = 1.0 / (input as f64).sqrt();
        for w in net.w1.iter_mut() {
            *w = trunk_scale * rng::normal(stream);
        }
        let head_scale = 1.0 / (hidden as f64).sqrt();
        for h in net.heads.iter_mut() {
            *h = head_scale * rng::normal(stream);
        }
        net
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.heads.len() + self.head_bias.len()
    }

    /// Flattens parameters as `w1 | b1 | heads | head_bias`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.heads);
        out.extend_from_slice(&self.head_bias);
        out
    }

    /// Restores parameters from [`Mlp::to_vec`] layout.
    pub fn from_vec(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let (w1, rest) = flat.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (heads, head_bias) = rest.split_at(self.heads.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.heads.copy_from_slice(heads);
        self.head_bias.copy_from_slice(head_bias);
        Ok(())
    }

    /// Trunk activations for one input.
    fn hidden_units(&self, x: &[f64], z: &mut [f64]) {
        for (j, zj) in z.iter_mut().enumerate() {
            let row = &self.w1[j * self.input..(j + 1) * self.input];
            let mut acc = self.b1[j];
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            *zj = acc.tanh();
        }
    }

    /// Scalar prediction for one input under one task head.
    pub fn predict(&self, x: &[f64], task: usize) -> f64 {
        let mut z = vec![0.0; self.hidden];
        self.hidden_units(x, &mut z);
        let head = &self.heads[task * self.hidden..(task + 1) * self.hidden];
        let mut acc = self.head_bias[task];
        for (h, zv) in head.iter().zip(&z) {
            acc += h * zv;
        }
        acc
    }

    /// Mean squared error over a batch of `(x, task, target)` rows; `xs` is
    /// row-major `len x input`.
    pub fn loss(&self, xs: &[f64], tasks: &[usize], ys: &[f64]) -> f64 {
        let n = ys.len();
        let mut total = 0.0;
        for i in 0..n {
            let x = &xs[i * self.input..(i + 1) * self.input];
            let e = self.predict(x, tasks[i]) - ys[i];
            total += e * e;
        }
        total / n as f64
    }

    /// Batch MSE and its gradient in [`Mlp::to_vec`] layout.
    pub fn loss_grad(&self, xs: &[f64], tasks: &[usize], ys: &[f64]) -> (f64, Vec<f64>) {
        let n = ys.len();
        let inv_n = 1.0 / n as f64;
        let mut g_w1 = vec![0.0; self.w1.len()];
        let mut g_b1 = vec![0.0; self.b1.len()];
        let mut g_heads = vec![0.0; self.heads.len()];
        let mut g_head_bias = vec![0.0; self.head_bias.len()];
        let mut z = vec![0.0; self.hidden];
        let mut total = 0.0;

        for i in 0..n {
            let x = &xs[i * self.input..(i + 1) * self.input];
            let task = tasks[i];
            self.hidden_units(x, &mut z);
            let head = &self.heads[task * self.hidden..(task + 1) * self.hidden];
            let mut pred = self.head_bias[task];
            for (h, zv) in head.iter().zip(&z) {
                pred += h * zv;
            }
            let e = pred - ys[i];
            total += e * e;
            let d_pred = 2.0 * e * inv_n;

            let g_head = &mut g_heads[task * self.hidden..(task + 1) * self.hidden];
            for j in 0..self.hidden {
                g_head[j] += d_pred * z[j];
                // d(tanh)/d(pre) = 1 - z^2.
                let d_pre = d_pred * head[j] * (1.0 - z[j] * z[j]);
                g_b1[j] += d_pre;
                let g_row = &mut g_w1[j * self.input..(j + 1) * self.input];
                for (gw, xv) in g_row.iter_mut().zip(x) {
                    *gw += d_pre * xv;
                }
            }
            g_head_bias[task] += d_pred;
        }

        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(&g_w1);
        flat.extend_from_slice(&g_b1);
        flat.extend_from_slice(&g_heads);
        flat.extend_from_slice(&g_head_bias);
        (total * inv_n, flat)
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.heads.iter().all(|v| v.is_finite())
            && self.head_bias.iter().all(|v| v.is_finite())
    }
}

/// Parameter block selection for sharpness probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamSubset {
    All,
    /// Shared trunk weights and biases.
    Trunk,
    /// Every task head (weights and biases).
    Heads,
}

impl ParamSubset {
    /// Coordinate mask over the [`Mlp::to_vec`] layout.
    pub fn mask(self, net: &Mlp) -> Vec<bool> {
        let trunk = net.w1.len() + net.b1.len();
        let total = net.param_count();
        match self {
            ParamSubset::All => vec![true; total],
            ParamSubset::Trunk => (0..total).map(|i| i < trunk).collect(),
            ParamSubset::Heads => (0..total).map(|i| i >= trunk).collect(),
        }
    }
}
