//! Outer optimizers: plain SGD and bias-corrected Adam.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.kind == OptimizerKind::Adam {
            for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
                }
            }
            if !(self.eps > 0.0) {
                return Err(Error::invalid(format!("eps must be > 0, got {}", self.eps)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterOptimizerState {
    pub config: OptimizerConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OuterOptimizerState {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(OuterOptimizerState {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        })
    }

    /// Applies one update according to the configured kind.
    pub fn update(&mut self, grad: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let (th, next) = match self.config.kind {
            OptimizerKind::Sgd => sgd_update(self.clone(), grad, theta)?,
            OptimizerKind::Adam => adam_update(self.clone(), grad, theta)?,
        };
        *self = next;
        Ok(th)
    }
}

fn check(state: &OuterOptimizerState, grad: &[f64], theta: &[f64]) -> Result<()> {
    if grad.len() != theta.len() || state.m.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            got: if grad.len() != state.m.len() { grad.len() } else { theta.len() },
        });
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure {
            step: state.step as usize,
            what: format!("non-finite gradient component {g}"),
        });
    }
    Ok(())
}

/// `θ' = θ − α·g`.
pub fn sgd_update(mut state: OuterOptimizerState, grad: &[f64], theta: &[f64]) -> Result<(Vec<f64>, OuterOptimizerState)> {
    check(&state, grad, theta)?;
    let lr = state.config.lr;
    let out = theta.iter().zip(grad).map(|(t, g)| t - lr * g).collect();
    state.step += 1;
    Ok((out, state))
}

/// Bias-corrected Adam; `eps` is added to `√v̂`.
pub fn adam_update(mut state: OuterOptimizerState, grad: &[f64], theta: &[f64]) -> Result<(Vec<f64>, OuterOptimizerState)> {
    check(&state, grad, theta)?;
    let OptimizerConfig { lr, beta1, beta2, eps, .. } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powf(state.step as f64);
    let bc2 = 1.0 - beta2.powf(state.step as f64);
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        out.push(theta[i] - lr * m_hat / (v_hat.sqrt() + eps));
    }
    Ok((out, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sgd_example() {
        let s = OuterOptimizerState::new(OptimizerConfig::sgd(0.1), 2).unwrap();
        let (th, s) = sgd_update(s, &[1.0, -2.0], &[0.0, 0.0]).unwrap();
        assert!((th[0] + 0.1).abs() < 1e-15 && (th[1] - 0.2).abs() < 1e-15);
        assert_eq!(s.step, 1);
        let (th2, _) = sgd_update(s, &[0.0, 0.0], &th).unwrap();
        assert_eq!(th2, th);
    }

    #[test]
    fn zero_gradient_never_moves_adam() {
        let mut s = OuterOptimizerState::new(OptimizerConfig::adam(0.01), 3).unwrap();
        let mut th = vec![0.5, -1.0, 2.0];
        for _ in 0..100 {
            th = s.update(&[0.0; 3], &th).unwrap();
        }
        assert_eq!(th, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.step, 100);
    }

    #[test]
    fn rejects_non_finite_and_mismatch() {
        let s = OuterOptimizerState::new(OptimizerConfig::adam(0.01), 2).unwrap();
        assert!(adam_update(s.clone(), &[f64::NAN, 0.0], &[0.0, 0.0]).is_err());
        assert!(sgd_update(s.clone(), &[f64::INFINITY, 0.0], &[0.0, 0.0]).is_err());
        assert!(sgd_update(s, &[1.0], &[0.0, 0.0]).is_err());
        assert!(OuterOptimizerState::new(OptimizerConfig { beta1: 1.0, ..OptimizerConfig::adam(0.1) }, 1).is_err());
    }

    #[test]
    fn adam_matches_hand_computation() {
        // Two steps with g = 1 then g = -2, defaults.
        let s = OuterOptimizerState::new(OptimizerConfig::adam(0.1), 1).unwrap();
        let (th, s) = adam_update(s, &[1.0], &[0.0]).unwrap();
        let step1 = 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((th[0] + step1).abs() < 1e-15);
        let (th2, _) = adam_update(s, &[-2.0], &th).unwrap();
        let m = 0.9 * 0.1 + 0.1 * -2.0;
        let v = 0.999 * 0.001 + 0.001 * 4.0;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64 * 0.999);
        let expected = th[0] - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((th2[0] - expected).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn adam_first_step_is_at_most_lr(g in prop::collection::vec(-1e3f64..1e3, 1..6), lr in 1e-4f64..1.0) {
            let s = OuterOptimizerState::new(OptimizerConfig::adam(lr), g.len()).unwrap();
            let th0 = vec![0.0; g.len()];
            let (th, _) = adam_update(s, &g, &th0).unwrap();
            for (t, gi) in th.iter().zip(&g) {
                prop_assert!(t.abs() <= lr * (1.0 + 1e-12));
                if gi.abs() > 1e-3 {
                    prop_assert!((t.abs() - lr).abs() <= lr * 1e-4);
                }
            }
        }

        #[test]
        fn sgd_is_linear(g in prop::collection::vec(-10f64..10.0, 1..5), c in -5f64..5.0) {
            let s = OuterOptimizerState::new(OptimizerConfig::sgd(0.3), g.len()).unwrap();
            let th0 = vec![1.0; g.len()];
            let cg: Vec<f64> = g.iter().map(|x| c * x).collect();
            let (th, _) = sgd_update(s, &cg, &th0).unwrap();
            for i in 0..g.len() {
                prop_assert!((th[i] - (1.0 - c * 0.3 * g[i])).abs() < 1e-12);
            }
        }
    }
}
