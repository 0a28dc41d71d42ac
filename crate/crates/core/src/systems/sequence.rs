//! Tiny recurrent next-token model over a synthetic token stream.
//!
//! `h' = tanh(W h + U e_{x_t})`, logits `R h' + c`, cross-entropy against
//! `x_{t+1}`. Parameters are laid out flat as `[W (H×H), U (H×V), R (V×H), c (V)]`,
//! all row-major.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Horizon, LossGradients, StepJacobians, UnrolledSystem};
use crate::error::{Error, Result};
use crate::rng::RngKey;

/// Probability that the correlated stream repeats its previous token.
pub const MARKOV_STAY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Fresh uniform token every step.
    Iid,
    /// One token repeated.
    Identical,
    /// Markov chain that keeps its token with probability 0.9.
    Correlated,
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Scenario::Iid),
            "identical" => Ok(Scenario::Identical),
            "correlated" => Ok(Scenario::Correlated),
            other => Err(Error::invalid(format!("unknown sequence scenario `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Iid => "iid",
            Scenario::Identical => "identical",
            Scenario::Correlated => "correlated",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SequenceTask {
    scenario: Scenario,
    seq_len: usize,
    vocab: usize,
    hidden: usize,
    tokens: Vec<usize>,
}

pub fn make_sequence_task(
    scenario: Scenario,
    seq_len: usize,
    vocab: usize,
    hidden: usize,
    stream_key: RngKey,
) -> Result<SequenceTask> {
    if seq_len == 0 {
        return Err(Error::invalid("sequence length must be >= 1"));
    }
    if vocab < 2 || hidden == 0 {
        return Err(Error::invalid("sequence task needs vocab >= 2 and hidden >= 1"));
    }
    let n = seq_len + 1;
    let u = stream_key.uniforms(2 * n);
    let pick = |x: f64| ((x * vocab as f64) as usize).min(vocab - 1);
    let tokens = match scenario {
        Scenario::Identical => vec![0; n],
        Scenario::Iid => (0..n).map(|i| pick(u[i])).collect(),
        Scenario::Correlated => {
            let mut out = Vec::with_capacity(n);
            let mut cur = pick(u[0]);
            out.push(cur);
            for i in 1..n {
                if u[2 * i] >= MARKOV_STAY {
                    cur = pick(u[2 * i + 1]);
                }
                out.push(cur);
            }
            out
        }
    };
    Ok(SequenceTask {
        scenario,
        seq_len,
        vocab,
        hidden,
        tokens,
    })
}

impl SequenceTask {
    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// Gaussian initial parameters with standard deviation `scale`.
    pub fn random_params(&self, key: RngKey, scale: f64) -> Vec<f64> {
        key.normals(self.param_dim()).into_iter().map(|z| scale * z).collect()
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let (h, v) = (self.hidden, self.vocab);
        let w = 0;
        let u = w + h * h;
        let r = u + h * v;
        let c = r + v * h;
        (w, u, r, c)
    }

    fn input(&self, t: usize) -> usize {
        self.tokens[t.min(self.seq_len)]
    }

    fn target(&self, t: usize) -> usize {
        self.tokens[(t + 1).min(self.seq_len)]
    }

    fn pre_activation(&self, s: &[f64], t: usize, params: &[f64]) -> Vec<f64> {
        let (w, u, _, _) = self.offsets();
        let (h, v) = (self.hidden, self.vocab);
        let x = self.input(t);
        (0..h)
            .map(|i| {
                let rec: f64 = (0..h).map(|j| params[w + i * h + j] * s[j]).sum();
                rec + params[u + i * v + x]
            })
            .collect()
    }

    /// Softmax probabilities of the next-token logits at state `s`.
    fn probabilities(&self, s: &[f64], params: &[f64]) -> Vec<f64> {
        let (_, _, r, c) = self.offsets();
        let h = self.hidden;
        let logits: Vec<f64> = (0..self.vocab)
            .map(|k| (0..h).map(|j| params[r + k * h + j] * s[j]).sum::<f64>() + params[c + k])
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }
}

impl UnrolledSystem for SequenceTask {
    fn name(&self) -> String {
        format!("seq:{}(T={},V={},H={})", self.scenario, self.seq_len, self.vocab, self.hidden)
    }

    fn state_dim(&self) -> usize {
        self.hidden
    }

    fn param_dim(&self) -> usize {
        let (h, v) = (self.hidden, self.vocab);
        h * h + 2 * h * v + v
    }

    fn horizon(&self) -> Horizon {
        Horizon::Finite(self.seq_len)
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.hidden]
    }

    fn step(&self, s: &[f64], t: usize, params: &[f64]) -> Vec<f64> {
        self.pre_activation(s, t, params).into_iter().map(f64::tanh).collect()
    }

    fn step_loss(&self, s: &[f64], t: usize, params: &[f64]) -> f64 {
        let (_, _, r, c) = self.offsets();
        let h = self.hidden;
        let logits: Vec<f64> = (0..self.vocab)
            .map(|k| (0..h).map(|j| params[r + k * h + j] * s[j]).sum::<f64>() + params[c + k])
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        lse - logits[self.target(t)]
    }

    fn step_jacobians(&self, s: &[f64], t: usize, params: &[f64]) -> Option<StepJacobians> {
        let (w, u, _, _) = self.offsets();
        let (h, v) = (self.hidden, self.vocab);
        let x = self.input(t);
        let d: Vec<f64> = self
            .pre_activation(s, t, params)
            .into_iter()
            .map(|a| 1.0 - a.tanh().powi(2))
            .collect();
        let wrt_state = DMatrix::from_fn(h, h, |i, j| d[i] * params[w + i * h + j]);
        let mut wrt_params = DMatrix::zeros(h, self.param_dim());
        for i in 0..h {
            for j in 0..h {
                wrt_params[(i, w + i * h + j)] = d[i] * s[j];
            }
            wrt_params[(i, u + i * v + x)] = d[i];
        }
        Some(StepJacobians { wrt_state, wrt_params })
    }

    fn loss_gradients(&self, s: &[f64], t: usize, params: &[f64]) -> Option<LossGradients> {
        let (_, _, r, c) = self.offsets();
        let (h, v) = (self.hidden, self.vocab);
        let mut delta = self.probabilities(s, params);
        delta[self.target(t)] -= 1.0;
        let wrt_state = DVector::from_fn(h, |j, _| (0..v).map(|k| params[r + k * h + j] * delta[k]).sum());
        let mut wrt_params = DVector::zeros(self.param_dim());
        for k in 0..v {
            for j in 0..h {
                wrt_params[r + k * h + j] = delta[k] * s[j];
            }
            wrt_params[c + k] = delta[k];
        }
        Some(LossGradients { wrt_state, wrt_params })
    }

    fn has_jacobians(&self) -> bool {
        true
    }
}
