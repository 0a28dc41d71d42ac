//! Toy 2-D regression: gradient descent on a bumpy objective with a
//! linearly interpolated log-parameterized learning-rate schedule.

use nalgebra::{DMatrix, DVector};

use super::{Horizon, LossGradients, StepJacobians, UnrolledSystem};
use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// `√(x₀²+5) − √5 + sin²(x₁)·exp(−5x₀²) + 0.25·|x₁ − 100|`
pub fn toy2d_objective(x: &[f64]) -> f64 {
    let (x0, x1) = (x[0], x[1]);
    (x0 * x0 + 5.0).sqrt() - SQRT5 + x1.sin().powi(2) * (-5.0 * x0 * x0).exp() + 0.25 * (x1 - 100.0).abs()
}

fn kink_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`toy2d_objective`]; uses `sign(x₁ − 100)` (0 at the kink).
pub fn toy2d_objective_grad(x: &[f64]) -> [f64; 2] {
    let (x0, x1) = (x[0], x[1]);
    let e = (-5.0 * x0 * x0).exp();
    let s2 = x1.sin().powi(2);
    [
        x0 / (x0 * x0 + 5.0).sqrt() - 10.0 * x0 * s2 * e,
        (2.0 * x1).sin() * e + 0.25 * kink_sign(x1 - 100.0),
    ]
}

fn toy2d_objective_hessian(x: &[f64]) -> [[f64; 2]; 2] {
    let (x0, x1) = (x[0], x[1]);
    let e = (-5.0 * x0 * x0).exp();
    let s2 = x1.sin().powi(2);
    let r = x0 * x0 + 5.0;
    let h00 = 5.0 / (r * r.sqrt()) + s2 * e * (100.0 * x0 * x0 - 10.0);
    let h01 = -10.0 * x0 * (2.0 * x1).sin() * e;
    let h11 = 2.0 * (2.0 * x1).cos() * e;
    [[h00, h01], [h01, h11]]
}

/// `α_t = (1 − t/T)·e^{θ₀} + (t/T)·e^{θ₁}`
pub fn toy2d_lr(theta: &[f64], t: usize, horizon: usize) -> f64 {
    let (w0, w1) = lr_weights(theta, t, horizon);
    w0 + w1
}

fn lr_weights(theta: &[f64], t: usize, horizon: usize) -> (f64, f64) {
    let big_t = horizon as f64;
    let t = t as f64;
    (theta[0].exp() * (big_t - t) / big_t, theta[1].exp() * t / big_t)
}

#[derive(Clone, Debug)]
pub struct Toy2d {
    horizon: usize,
}

pub fn make_toy2d(horizon: usize) -> Result<Toy2d> {
    if horizon == 0 {
        return Err(Error::invalid("toy2d horizon must be >= 1"));
    }
    Ok(Toy2d { horizon })
}

impl UnrolledSystem for Toy2d {
    fn name(&self) -> String {
        format!("toy2d(T={})", self.horizon)
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> Horizon {
        Horizon::Finite(self.horizon)
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![1.0, 1.0]
    }

    fn step(&self, x: &[f64], t: usize, theta: &[f64]) -> Vec<f64> {
        let lr = toy2d_lr(theta, t, self.horizon);
        let g = toy2d_objective_grad(x);
        vec![x[0] - lr * g[0], x[1] - lr * g[1]]
    }

    fn step_loss(&self, x: &[f64], _t: usize, _theta: &[f64]) -> f64 {
        toy2d_objective(x)
    }

    fn step_jacobians(&self, x: &[f64], t: usize, theta: &[f64]) -> Option<StepJacobians> {
        let lr = toy2d_lr(theta, t, self.horizon);
        let (w0, w1) = lr_weights(theta, t, self.horizon);
        let h = toy2d_objective_hessian(x);
        let g = toy2d_objective_grad(x);
        Some(StepJacobians {
            wrt_state: DMatrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 } - lr * h[i][j]),
            wrt_params: DMatrix::from_fn(2, 2, |i, j| -g[i] * if j == 0 { w0 } else { w1 }),
        })
    }

    fn loss_gradients(&self, x: &[f64], _t: usize, _theta: &[f64]) -> Option<LossGradients> {
        let g = toy2d_objective_grad(x);
        Some(LossGradients {
            wrt_state: DVector::from_row_slice(&g),
            wrt_params: DVector::zeros(2),
        })
    }

    fn has_jacobians(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;
    use crate::systems::jacobian_fd_error;

    #[test]
    fn objective_at_origin() {
        assert!((toy2d_objective(&[0.0, 0.0]) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn objective_on_kink() {
        let expected = 100f64.sin().powi(2);
        assert!((toy2d_objective(&[0.0, 100.0]) - expected).abs() < 1e-12);
        assert_eq!(toy2d_objective_grad(&[0.0, 100.0])[1], (200f64).sin());
    }

    #[test]
    fn schedule_endpoints() {
        let theta = [-1.3, 0.4];
        assert_eq!(toy2d_lr(&theta, 0, 100), theta[0].exp());
        assert_eq!(toy2d_lr(&theta, 100, 100), theta[1].exp());
    }

    #[test]
    fn rejects_zero_horizon() {
        assert!(make_toy2d(0).is_err());
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let sys = make_toy2d(100).unwrap();
        for i in 0..10u64 {
            let key = RngKey::new(200 + i);
            let x: Vec<f64> = key.fold_in(0).normals(2).iter().map(|z| 2.0 * z).collect();
            let theta: Vec<f64> = key.fold_in(1).normals(2).iter().map(|z| z - 2.0).collect();
            let err = jacobian_fd_error(&sys, &x, (i * 9) as usize, &theta, 1e-5).unwrap();
            assert!(err < 1e-4, "point {i}: {err}");
        }
    }
}
