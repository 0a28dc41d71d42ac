//! Reference gradients and the Monte-Carlo variance harness.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::systems::{full_loss, loss_over, UnrolledSystem};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// `Aθ + b`.
pub fn analytic_grad_quadratic(a: &DMatrix<f64>, b: &DVector<f64>, theta: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(theta) + b).iter().copied().collect()
}

fn central_differences(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    (0..theta.len())
        .map(|i| {
            let mut plus = theta.to_vec();
            plus[i] += h;
            let mut minus = theta.to_vec();
            minus[i] -= h;
            Ok((f(&plus)? - f(&minus)?) / (2.0 * h))
        })
        .collect()
}

/// Central differences of the full-problem total loss.
pub fn finite_difference_grad(system: &dyn UnrolledSystem, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    system.horizon().finite().ok_or(Error::InfiniteHorizon)?;
    central_differences(|th| full_loss(system, th), theta, h)
}

/// Central differences of the total loss over the first `horizon` steps;
/// usable on infinite-horizon systems.
pub fn finite_difference_grad_over(system: &dyn UnrolledSystem, theta: &[f64], h: f64, horizon: usize) -> Result<Vec<f64>> {
    central_differences(|th| loss_over(system, th, horizon), theta, h)
}

fn require_jacobians(system: &dyn UnrolledSystem) -> Result<()> {
    if system.has_jacobians() {
        Ok(())
    } else {
        Err(Error::MissingJacobians(system.name()))
    }
}

fn missing(system: &dyn UnrolledSystem) -> Error {
    Error::MissingJacobians(system.name())
}

/// Per-step exact gradients `dL_t/dθ` for steps `t0 .. t0 + k` starting from
/// `state`, by forward accumulation of `ds_t/dθ = (∂f/∂s)·ds_{t−1}/dθ + ∂f/∂θ`
/// (with `ds_{t0−1}/dθ = 0`). Masked steps contribute zero vectors.
pub fn rtrl_per_step(
    system: &dyn UnrolledSystem,
    state: &[f64],
    theta: &[f64],
    t0: usize,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    require_jacobians(system)?;
    let (s_dim, p_dim) = (system.state_dim(), system.param_dim());
    let horizon = system.horizon();
    let mut s = state.to_vec();
    let mut ds = DMatrix::<f64>::zeros(s_dim, p_dim);
    let mut out = Vec::with_capacity(k);
    for t in t0..t0 + k {
        let jac = system.step_jacobians(&s, t, theta).ok_or_else(|| missing(system))?;
        ds = &jac.wrt_state * &ds + &jac.wrt_params;
        s = system.step(&s, t, theta);
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                step: t,
                what: "non-finite state".into(),
            });
        }
        if horizon.counts(t) {
            let g = system.loss_gradients(&s, t, theta).ok_or_else(|| missing(system))?;
            let total = ds.transpose() * &g.wrt_state + &g.wrt_params;
            out.push(total.iter().copied().collect());
        } else {
            out.push(vec![0.0; p_dim]);
        }
    }
    Ok(out)
}

fn exact_columns(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| rows.iter().map(|r| r[j]).sum::<ExactSum>().value())
        .collect()
}

/// Exact gradient of the total loss over the first `horizon` steps from the
/// initial state, by forward (real-time recurrent) accumulation.
pub fn rtrl_forward_grad(system: &dyn UnrolledSystem, theta: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    let per_step = rtrl_per_step(system, &system.initial_state(), theta, 0, horizon)?;
    Ok(exact_columns(&per_step, system.param_dim()))
}

/// Gradient of the `k`-step loss starting from `state` at step `t0`, treating
/// `state` as a constant; computed by reverse accumulation over the window.
pub fn tbptt_grad(system: &dyn UnrolledSystem, state: &[f64], theta: &[f64], t0: usize, k: usize) -> Result<Vec<f64>> {
    require_jacobians(system)?;
    if k == 0 {
        return Err(Error::invalid("window length must be >= 1"));
    }
    let horizon = system.horizon();
    let mut states = Vec::with_capacity(k + 1);
    states.push(state.to_vec());
    for t in t0..t0 + k {
        let next = system.step(states.last().unwrap(), t, theta);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                step: t,
                what: "non-finite state".into(),
            });
        }
        states.push(next);
    }
    let mut adjoint = DVector::<f64>::zeros(system.state_dim());
    let mut grad = DVector::<f64>::zeros(system.param_dim());
    for i in (0..k).rev() {
        let t = t0 + i;
        if horizon.counts(t) {
            let g = system.loss_gradients(&states[i + 1], t, theta).ok_or_else(|| missing(system))?;
            adjoint += &g.wrt_state;
            grad += &g.wrt_params;
        }
        let jac = system.step_jacobians(&states[i], t, theta).ok_or_else(|| missing(system))?;
        grad += jac.wrt_params.transpose() * &adjoint;
        adjoint = jac.wrt_state.transpose() * &adjoint;
    }
    Ok(grad.iter().copied().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub mean_grad: Vec<f64>,
    /// Trace of the unbiased sample covariance, from centered samples.
    pub total_variance: f64,
    pub replicates: usize,
    /// Unbiased per-coordinate variances, from a streaming (Welford) pass.
    pub per_coordinate: Vec<f64>,
}

impl VarianceReport {
    /// `Σ per_coordinate`; agrees with `total_variance` up to rounding.
    pub fn marginal_total(&self) -> f64 {
        self.per_coordinate.iter().copied().sum::<ExactSum>().value()
    }

    /// Standard error of each coordinate of `mean_grad`.
    pub fn standard_errors(&self) -> Vec<f64> {
        self.per_coordinate
            .iter()
            .map(|v| (v / self.replicates as f64).sqrt())
            .collect()
    }

    pub fn mean_grad_norm(&self) -> f64 {
        self.mean_grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Runs `make_estimate(r)` for `r in 0..replicates` (in parallel; each call
/// must derive its own keys from `r`) and summarizes the samples. The result
/// does not depend on the worker count.
pub fn empirical_variance<F>(make_estimate: F, replicates: usize) -> Result<VarianceReport>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    if replicates < 2 {
        return Err(Error::invalid("need at least 2 replicates"));
    }
    let samples: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(&make_estimate)
        .collect::<Result<_>>()?;
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let n = replicates as f64;

    let mean_grad: Vec<f64> = (0..dim)
        .map(|j| samples.iter().map(|s| s[j]).sum::<ExactSum>().value() / n)
        .collect();
    let total_variance = samples
        .iter()
        .map(|s| s.iter().zip(&mean_grad).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum::<ExactSum>()
        .value()
        / (n - 1.0);

    let mut w_mean = vec![0.0; dim];
    let mut w_m2 = vec![0.0; dim];
    for (r, s) in samples.iter().enumerate() {
        let count = (r + 1) as f64;
        for j in 0..dim {
            let delta = s[j] - w_mean[j];
            w_mean[j] += delta / count;
            w_m2[j] += delta * (s[j] - w_mean[j]);
        }
    }
    let per_coordinate = w_m2.iter().map(|m2| m2 / (n - 1.0)).collect();

    Ok(VarianceReport {
        mean_grad,
        total_variance,
        replicates,
        per_coordinate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;
    use crate::systems::{
        make_influence_balancing, make_quadratic, make_sequence_task, make_toy2d, random_quadratic, relative_error,
        unroll, Scenario,
    };

    #[test]
    fn quadratic_gradient_examples() {
        let g = analytic_grad_quadratic(&DMatrix::from_element(1, 1, 2.0), &DVector::zeros(1), &[1.0]);
        assert_eq!(g, vec![2.0]);
        let g = analytic_grad_quadratic(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 0.0]), &[0.0, 0.0]);
        assert_eq!(g, vec![1.0, 0.0]);
    }

    #[test]
    fn analytic_matches_differences() {
        let q = random_quadratic(RngKey::new(30), 3, 1).unwrap();
        let theta = [0.4, -1.1, 2.0];
        let fd = finite_difference_grad(&q, &theta, FD_STEP).unwrap();
        let an = analytic_grad_quadratic(q.a(), q.b(), &theta);
        for (a, f) in an.iter().zip(&fd) {
            assert!((a - f).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_fd_example() {
        let q = make_quadratic(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1), 1).unwrap();
        let g = finite_difference_grad(&q, &[1.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6);
        let flat = make_quadratic(DMatrix::zeros(2, 2), DVector::zeros(2), 3).unwrap();
        assert_eq!(finite_difference_grad(&flat, &[0.3, 0.1], 1e-4).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn fd_rejects_bad_step_and_infinite_horizon() {
        let q = make_quadratic(DMatrix::identity(1, 1), DVector::zeros(1), 1).unwrap();
        assert!(finite_difference_grad(&q, &[1.0], 0.0).is_err());
        let inf = make_influence_balancing(3, 1).unwrap();
        assert!(finite_difference_grad(&inf, &[0.1], 1e-4).is_err());
    }

    #[test]
    fn rtrl_influence_hand_example() {
        // One step from (1,1) at θ = 0.5: s' = (1.5, 0); dL/dθ = (1.5 − 1)·1.
        let sys = make_influence_balancing(2, 1).unwrap();
        assert_eq!(rtrl_forward_grad(&sys, &[0.5], 1).unwrap(), vec![0.5]);
    }

    #[test]
    fn rtrl_on_quadratic_is_analytic() {
        let q = random_quadratic(RngKey::new(31), 4, 5).unwrap();
        let theta = [0.1, 0.2, 0.3, 0.4];
        let r = rtrl_forward_grad(&q, &theta, 5).unwrap();
        let a = analytic_grad_quadratic(q.a(), q.b(), &theta);
        assert!(relative_error(&r, &a) < 1e-12);
    }

    #[test]
    fn rtrl_matches_fd_on_toy2d() {
        let sys = make_toy2d(100).unwrap();
        let theta = [-2.5, -2.0];
        let r = rtrl_forward_grad(&sys, &theta, 100).unwrap();
        let fd = finite_difference_grad(&sys, &theta, 1e-5).unwrap();
        assert!(relative_error(&r, &fd) < 1e-3, "{r:?} vs {fd:?}");
    }

    #[test]
    fn tbptt_full_window_equals_rtrl() {
        let sys = make_sequence_task(Scenario::Correlated, 40, 3, 3, RngKey::new(2)).unwrap();
        let theta = sys.random_params(RngKey::new(3), 0.5);
        let r = rtrl_forward_grad(&sys, &theta, 40).unwrap();
        let b = tbptt_grad(&sys, &sys.initial_state(), &theta, 0, 40).unwrap();
        assert!(relative_error(&r, &b) < 1e-12);
    }

    #[test]
    fn tbptt_window_matches_fd() {
        let sys = make_influence_balancing(23, 10).unwrap();
        let s = unroll(&sys, &sys.initial_state(), &[0.5], 0, 300).unwrap().state;
        let g = tbptt_grad(&sys, &s, &[0.5], 300, 10).unwrap();
        let h = 1e-5;
        let f = |th: f64| unroll(&sys, &s, &[th], 300, 10).unwrap().loss_sum();
        let fd = (f(0.5 + h) - f(0.5 - h)) / (2.0 * h);
        assert!((g[0] - fd).abs() < 1e-4 * fd.abs());
    }

    #[test]
    fn constant_loss_oracles_vanish() {
        let flat = make_quadratic(DMatrix::zeros(2, 2), DVector::zeros(2), 3).unwrap();
        assert_eq!(tbptt_grad(&flat, &[], &[1.0, 2.0], 0, 3).unwrap(), vec![0.0, 0.0]);
        assert_eq!(rtrl_forward_grad(&flat, &[1.0, 2.0], 3).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn jacobian_free_systems_rejected() {
        let mlp = crate::systems::make_lr_schedule_mlp(Default::default(), RngKey::new(0)).unwrap();
        assert!(matches!(rtrl_forward_grad(&mlp, &[0.1, 0.0], 2), Err(Error::MissingJacobians(_))));
        assert!(matches!(
            tbptt_grad(&mlp, &mlp.initial_state(), &[0.1, 0.0], 0, 2),
            Err(Error::MissingJacobians(_))
        ));
    }

    #[test]
    fn constant_closure_has_zero_variance() {
        let rep = empirical_variance(|_| Ok(vec![1.5, -2.0]), 50).unwrap();
        assert_eq!(rep.total_variance, 0.0);
        assert_eq!(rep.mean_grad, vec![1.5, -2.0]);
    }

    #[test]
    fn variance_routes_agree() {
        let rep = empirical_variance(|r| Ok(RngKey::new(r).normals(3).iter().map(|z| 2.0 * z + 1.0).collect()), 20_000)
            .unwrap();
        let rel = (rep.total_variance - rep.marginal_total()).abs() / rep.total_variance;
        assert!(rel < 1e-9, "{rel}");
        assert!((rep.total_variance - 12.0).abs() < 0.5);
        assert!(rep.total_variance >= 0.0);
    }

    #[test]
    fn variance_needs_two_replicates() {
        assert!(empirical_variance(|_| Ok(vec![0.0]), 1).is_err());
    }
}
