//! Learning-rate-schedule meta-optimization of a small ReLU MLP.
//!
//! The inner state is the flattened network (weights then biases, layer by
//! layer) followed by an equally sized momentum buffer. Each step applies one
//! SGD-with-momentum update on a minibatch of a synthetic two-blob
//! classification set with learning rate `α_t = θ₀ / (1 + t/Q)^{θ₁}`.

use serde::{Deserialize, Serialize};

use super::{Horizon, UnrolledSystem};
use crate::error::{Error, Result};
use crate::rng::RngKey;

pub const INPUT_DIM: usize = 10;
pub const N_CLASSES: usize = 2;

/// `θ₀ / (1 + t/Q)^{θ₁}`
pub fn inverse_power_lr(theta: &[f64], t: usize, decay_steps: f64) -> f64 {
    theta[0] / (1.0 + t as f64 / decay_steps).powf(theta[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Loss on the minibatch the step trained on.
    Minibatch,
    /// Loss on a batch frozen at construction; pure in the state, which
    /// telescoping needs.
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpLrConfig {
    pub hidden: Vec<usize>,
    pub horizon: usize,
    pub decay_steps: f64,
    pub momentum: f64,
    pub n_train: usize,
    pub batch_size: usize,
    pub fixed_batch: usize,
    pub loss_mode: LossMode,
}

impl Default for MlpLrConfig {
    fn default() -> Self {
        MlpLrConfig {
            hidden: vec![16],
            horizon: 200,
            decay_steps: 5000.0,
            momentum: 0.9,
            n_train: 1000,
            batch_size: 100,
            fixed_batch: 1000,
            loss_mode: LossMode::Minibatch,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MlpLrSchedule {
    cfg: MlpLrConfig,
    widths: Vec<usize>,
    n_weights: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    init: Vec<f64>,
}

pub fn make_lr_schedule_mlp(cfg: MlpLrConfig, dataset_seed: RngKey) -> Result<MlpLrSchedule> {
    if cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
        return Err(Error::invalid("mlp needs at least one non-empty hidden layer"));
    }
    if cfg.horizon == 0 || cfg.batch_size == 0 || cfg.n_train < cfg.batch_size {
        return Err(Error::invalid("mlp needs horizon >= 1 and n_train >= batch_size >= 1"));
    }
    if cfg.fixed_batch == 0 || cfg.fixed_batch > cfg.n_train {
        return Err(Error::invalid("fixed batch must be within the training set"));
    }
    if !(cfg.decay_steps > 0.0) {
        return Err(Error::invalid("decay constant Q must be > 0"));
    }
    let mut widths = vec![INPUT_DIM];
    widths.extend(&cfg.hidden);
    widths.push(N_CLASSES);
    let n_weights = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();

    let data_key = dataset_seed.fold_in(0);
    let labels: Vec<usize> = data_key
        .fold_in(0)
        .uniforms(cfg.n_train)
        .into_iter()
        .map(|u| usize::from(u >= 0.5))
        .collect();
    let noise = data_key.fold_in(1).normals(cfg.n_train * INPUT_DIM);
    let inputs: Vec<f64> = noise
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mean = if labels[i / INPUT_DIM] == 1 { 1.0 } else { -1.0 };
            mean + z
        })
        .collect();

    let mut init = Vec::with_capacity(n_weights);
    for (l, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let scale = (2.0 / fan_in as f64).sqrt();
        init.extend(
            dataset_seed
                .fold_in(1)
                .fold_in(l as u64)
                .normals(fan_in * fan_out)
                .into_iter()
                .map(|z| scale * z),
        );
        init.extend(std::iter::repeat_n(0.0, fan_out));
    }

    Ok(MlpLrSchedule {
        cfg,
        widths,
        n_weights,
        inputs,
        labels,
        init,
    })
}

impl MlpLrSchedule {
    pub fn config(&self) -> &MlpLrConfig {
        &self.cfg
    }

    pub fn n_weights(&self) -> usize {
        self.n_weights
    }

    fn batch_range(&self, t: usize) -> std::ops::Range<usize> {
        let n_batches = self.cfg.n_train / self.cfg.batch_size;
        let b = t % n_batches;
        b * self.cfg.batch_size..(b + 1) * self.cfg.batch_size
    }

    /// Forward pass for one example; returns activations per layer (input
    /// included) and the output logits.
    fn forward(&self, weights: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let n_layers = self.widths.len() - 1;
        for l in 0..n_layers {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let w = &weights[off..off + fi * fo];
            let b = &weights[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let prev = acts.last().unwrap();
            let mut out: Vec<f64> = (0..fo)
                .map(|o| (0..fi).map(|i| w[o * fi + i] * prev[i]).sum::<f64>() + b[o])
                .collect();
            if l + 1 < n_layers {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        acts
    }

    fn example_loss(logits: &[f64], label: usize) -> f64 {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        lse - logits[label]
    }

    fn mean_loss(&self, weights: &[f64], range: std::ops::Range<usize>) -> f64 {
        let n = range.len() as f64;
        range
            .map(|i| {
                let x = &self.inputs[i * INPUT_DIM..(i + 1) * INPUT_DIM];
                let acts = self.forward(weights, x);
                Self::example_loss(acts.last().unwrap(), self.labels[i])
            })
            .sum::<f64>()
            / n
    }

    /// Gradient of the mean minibatch cross-entropy.
    fn batch_gradient(&self, weights: &[f64], range: std::ops::Range<usize>) -> Vec<f64> {
        let n = range.len() as f64;
        let mut grad = vec![0.0; self.n_weights];
        let n_layers = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.widths[l] * self.widths[l + 1] + self.widths[l + 1];
        }
        for i in range {
            let x = &self.inputs[i * INPUT_DIM..(i + 1) * INPUT_DIM];
            let acts = self.forward(weights, x);
            let logits = acts.last().unwrap();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut delta: Vec<f64> = exps.iter().map(|e| e / total / n).collect();
            delta[self.labels[i]] -= 1.0 / n;
            for l in (0..n_layers).rev() {
                let (fi, fo) = (self.widths[l], self.widths[l + 1]);
                let o = offsets[l];
                let prev = &acts[l];
                for out in 0..fo {
                    for inp in 0..fi {
                        grad[o + out * fi + inp] += delta[out] * prev[inp];
                    }
                    grad[o + fi * fo + out] += delta[out];
                }
                if l > 0 {
                    let w = &weights[o..o + fi * fo];
                    delta = (0..fi)
                        .map(|inp| {
                            if prev[inp] > 0.0 {
                                (0..fo).map(|out| w[out * fi + inp] * delta[out]).sum()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                }
            }
        }
        grad
    }
}

impl UnrolledSystem for MlpLrSchedule {
    fn name(&self) -> String {
        format!("mlp_lr(hidden={:?},T={})", self.cfg.hidden, self.cfg.horizon)
    }

    fn state_dim(&self) -> usize {
        2 * self.n_weights
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> Horizon {
        Horizon::Finite(self.cfg.horizon)
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut s = self.init.clone();
        s.extend(std::iter::repeat_n(0.0, self.n_weights));
        s
    }

    fn step(&self, s: &[f64], t: usize, theta: &[f64]) -> Vec<f64> {
        let (weights, velocity) = s.split_at(self.n_weights);
        let lr = inverse_power_lr(theta, t, self.cfg.decay_steps);
        let g = self.batch_gradient(weights, self.batch_range(t));
        let mu = self.cfg.momentum;
        let v: Vec<f64> = velocity.iter().zip(&g).map(|(v, g)| mu * v + g).collect();
        let mut out: Vec<f64> = weights.iter().zip(&v).map(|(w, v)| w - lr * v).collect();
        out.extend(v);
        out
    }

    fn step_loss(&self, s: &[f64], t: usize, _theta: &[f64]) -> f64 {
        let weights = &s[..self.n_weights];
        match self.cfg.loss_mode {
            LossMode::Minibatch => self.mean_loss(weights, self.batch_range(t)),
            LossMode::Fixed => self.mean_loss(weights, 0..self.cfg.fixed_batch),
        }
    }
}
