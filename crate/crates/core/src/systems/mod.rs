//! Unrolled dynamical systems `s_t = f(s_{t-1}, t; θ)` with per-step losses.
//!
//! Step-index convention: `step(s, t, θ)` consumes the state *before* step `t`
//! and returns the state after it; `step_loss(s', t, θ)` is then evaluated on
//! that returned state. A full problem of horizon `T` runs steps `0..T`, and
//! steps at or beyond `T` still advance the state but contribute no loss.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactSum;

mod influence;
mod mlp;
mod quadratic;
mod sequence;
mod telescope;
mod toy2d;

pub use influence::{make_influence_balancing, InfluenceBalancing};
pub use mlp::{make_lr_schedule_mlp, inverse_power_lr, LossMode, MlpLrConfig, MlpLrSchedule};
pub use quadratic::{make_quadratic, random_quadratic, Quadratic};
pub use sequence::{make_sequence_task, Scenario, SequenceTask};
pub use telescope::{telescope_wrap, Telescoped};
pub use toy2d::{make_toy2d, toy2d_lr, toy2d_objective, toy2d_objective_grad, Toy2d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(usize),
    /// Never resets and never masks losses.
    Infinite,
}

impl Horizon {
    pub fn finite(self) -> Option<usize> {
        match self {
            Horizon::Finite(t) => Some(t),
            Horizon::Infinite => None,
        }
    }

    /// Whether step `t` contributes loss.
    pub fn counts(self, t: usize) -> bool {
        match self {
            Horizon::Finite(h) => t < h,
            Horizon::Infinite => true,
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(t) => write!(f, "{t}"),
            Horizon::Infinite => write!(f, "inf"),
        }
    }
}

/// `∂f/∂s` (S×S) and `∂f/∂θ` (S×P) at the state entering a step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepJacobians {
    pub wrt_state: DMatrix<f64>,
    pub wrt_params: DMatrix<f64>,
}

/// `∂L_t/∂s` and `∂L_t/∂θ` at the state produced by step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients {
    pub wrt_state: DVector<f64>,
    pub wrt_params: DVector<f64>,
}

pub trait UnrolledSystem: Send + Sync {
    fn name(&self) -> String;
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn horizon(&self) -> Horizon;
    fn initial_state(&self) -> Vec<f64>;
    fn step(&self, state: &[f64], t: usize, params: &[f64]) -> Vec<f64>;
    fn step_loss(&self, state: &[f64], t: usize, params: &[f64]) -> f64;

    fn step_jacobians(&self, _state: &[f64], _t: usize, _params: &[f64]) -> Option<StepJacobians> {
        None
    }

    fn loss_gradients(&self, _state: &[f64], _t: usize, _params: &[f64]) -> Option<LossGradients> {
        None
    }

    fn has_jacobians(&self) -> bool {
        false
    }
}

/// Result of a partial unroll. `loss` is held exactly so that consecutive
/// unrolls compose without rounding drift.
#[derive(Clone, Debug)]
pub struct Unroll {
    pub loss: ExactSum,
    pub state: Vec<f64>,
}

impl Unroll {
    pub fn loss_sum(&self) -> f64 {
        self.loss.value()
    }
}

fn check_dims(system: &dyn UnrolledSystem, state: &[f64], params: &[f64]) -> Result<()> {
    if state.len() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.state_dim(),
            got: state.len(),
        });
    }
    if params.len() != system.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.param_dim(),
            got: params.len(),
        });
    }
    Ok(())
}

/// Runs `k` steps starting at step index `t0`.
pub fn unroll(system: &dyn UnrolledSystem, state: &[f64], params: &[f64], t0: usize, k: usize) -> Result<Unroll> {
    if k == 0 {
        return Err(Error::invalid("unroll length must be >= 1"));
    }
    check_dims(system, state, params)?;
    let horizon = system.horizon();
    let mut loss = ExactSum::new();
    let mut s = state.to_vec();
    for t in t0..t0 + k {
        s = system.step(&s, t, params);
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                step: t,
                what: "non-finite state".into(),
            });
        }
        if horizon.counts(t) {
            let l = system.step_loss(&s, t, params);
            if !l.is_finite() {
                return Err(Error::NumericalFailure {
                    step: t,
                    what: format!("non-finite loss {l}"),
                });
            }
            loss.push(l);
        }
    }
    Ok(Unroll { loss, state: s })
}

/// Total loss of one full problem from the initial state.
pub fn full_loss(system: &dyn UnrolledSystem, params: &[f64]) -> Result<f64> {
    let t = system.horizon().finite().ok_or(Error::InfiniteHorizon)?;
    Ok(unroll(system, &system.initial_state(), params, 0, t)?.loss_sum())
}

/// Total loss over the first `horizon` steps from the initial state.
pub fn loss_over(system: &dyn UnrolledSystem, params: &[f64], horizon: usize) -> Result<f64> {
    Ok(unroll(system, &system.initial_state(), params, 0, horizon)?.loss_sum())
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst relative disagreement between a system's analytic Jacobians and
/// central finite differences (step `h`) at one point. `None` if the system
/// has no Jacobians.
pub fn jacobian_fd_error(system: &dyn UnrolledSystem, state: &[f64], t: usize, params: &[f64], h: f64) -> Option<f64> {
    let jac = system.step_jacobians(state, t, params)?;
    let s_dim = system.state_dim();
    let p_dim = system.param_dim();

    let fd_columns = |perturb: &dyn Fn(usize, f64) -> Vec<f64>, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|j| {
                let plus = perturb(j, h);
                let minus = perturb(j, -h);
                plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect()
            })
            .collect()
    };
    let col = |m: &DMatrix<f64>, j: usize| -> Vec<f64> { m.column(j).iter().copied().collect() };

    let mut worst: f64 = 0.0;
    let ds = fd_columns(
        &|j, d| {
            let mut s = state.to_vec();
            s[j] += d;
            system.step(&s, t, params)
        },
        s_dim,
    );
    for (j, c) in ds.iter().enumerate() {
        worst = worst.max(relative_error(&col(&jac.wrt_state, j), c));
    }
    let dp = fd_columns(
        &|j, d| {
            let mut p = params.to_vec();
            p[j] += d;
            system.step(state, t, &p)
        },
        p_dim,
    );
    for (j, c) in dp.iter().enumerate() {
        worst = worst.max(relative_error(&col(&jac.wrt_params, j), c));
    }

    let grads = system.loss_gradients(state, t, params)?;
    let loss_fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
    let gs: Vec<f64> = (0..s_dim)
        .map(|j| {
            loss_fd(&|d| {
                let mut s = state.to_vec();
                s[j] += d;
                system.step_loss(&s, t, params)
            })
        })
        .collect();
    let gp: Vec<f64> = (0..p_dim)
        .map(|j| {
            loss_fd(&|d| {
                let mut p = params.to_vec();
                p[j] += d;
                system.step_loss(state, t, &p)
            })
        })
        .collect();
    worst = worst.max(relative_error(grads.wrt_state.as_slice(), &gs));
    worst = worst.max(relative_error(grads.wrt_params.as_slice(), &gp));
    Some(worst)
}
