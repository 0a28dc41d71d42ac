//! Influence balancing: `s' = A s + (θ,…,θ, −θ,…,−θ)` with `A` upper
//! bidiagonal (0.5 on the diagonal and superdiagonal), loss `½(s⁽¹⁾ − 1)²`.
//! A positive θ pushes the first coordinate up immediately, while the
//! negative entries further down the chain drag it down in the long run.

use nalgebra::{DMatrix, DVector};

use super::{Horizon, LossGradients, StepJacobians, UnrolledSystem};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct InfluenceBalancing {
    n: usize,
    p: usize,
}

pub fn make_influence_balancing(n: usize, p: usize) -> Result<InfluenceBalancing> {
    if n < 1 {
        return Err(Error::invalid("influence balancing needs n >= 1"));
    }
    if p < 1 || p > n {
        return Err(Error::invalid(format!("influence balancing needs 1 <= p <= n, got p={p}, n={n}")));
    }
    Ok(InfluenceBalancing { n, p })
}

impl InfluenceBalancing {
    fn sign(&self, i: usize) -> f64 {
        if i < self.p {
            1.0
        } else {
            -1.0
        }
    }

    pub fn transition(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if j == i || j == i + 1 { 0.5 } else { 0.0 })
    }
}

impl UnrolledSystem for InfluenceBalancing {
    fn name(&self) -> String {
        format!("influence(n={},p={})", self.n, self.p)
    }

    fn state_dim(&self) -> usize {
        self.n
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> Horizon {
        Horizon::Infinite
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![1.0; self.n]
    }

    fn step(&self, s: &[f64], _t: usize, params: &[f64]) -> Vec<f64> {
        let theta = params[0];
        (0..self.n)
            .map(|i| {
                let next = if i + 1 < self.n { s[i + 1] } else { 0.0 };
                0.5 * s[i] + 0.5 * next + self.sign(i) * theta
            })
            .collect()
    }

    fn step_loss(&self, s: &[f64], _t: usize, _params: &[f64]) -> f64 {
        0.5 * (s[0] - 1.0) * (s[0] - 1.0)
    }

    fn step_jacobians(&self, _s: &[f64], _t: usize, _params: &[f64]) -> Option<StepJacobians> {
        Some(StepJacobians {
            wrt_state: self.transition(),
            wrt_params: DMatrix::from_fn(self.n, 1, |i, _| self.sign(i)),
        })
    }

    fn loss_gradients(&self, s: &[f64], _t: usize, _params: &[f64]) -> Option<LossGradients> {
        let mut ds = DVector::zeros(self.n);
        ds[0] = s[0] - 1.0;
        Some(LossGradients {
            wrt_state: ds,
            wrt_params: DVector::zeros(1),
        })
    }

    fn has_jacobians(&self) -> bool {
        true
    }
}
