//! Rewrites a system's per-step losses as differences `p_t = L_t − L_{t−1}`
//! (with `L_{−1} = 0`), so that any sum over a full problem collapses to the
//! final loss. The previous loss is carried in one extra state slot.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Horizon, LossGradients, StepJacobians, UnrolledSystem};

#[derive(Clone)]
pub struct Telescoped {
    inner: Arc<dyn UnrolledSystem>,
}

/// The inner system's `step_loss` must depend only on `(state, t, θ)`; for
/// minibatch tasks that means evaluating on a fixed batch.
pub fn telescope_wrap(inner: Arc<dyn UnrolledSystem>) -> Telescoped {
    Telescoped { inner }
}

impl Telescoped {
    pub fn inner(&self) -> &dyn UnrolledSystem {
        self.inner.as_ref()
    }

    fn inner_dim(&self) -> usize {
        self.inner.state_dim()
    }
}

impl std::fmt::Debug for Telescoped {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Telescoped({})", self.inner.name())
    }
}

impl UnrolledSystem for Telescoped {
    fn name(&self) -> String {
        format!("telescope({})", self.inner.name())
    }

    fn state_dim(&self) -> usize {
        self.inner_dim() + 1
    }

    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn horizon(&self) -> Horizon {
        self.inner.horizon()
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut s = self.inner.initial_state();
        s.push(0.0);
        s
    }

    fn step(&self, s: &[f64], t: usize, params: &[f64]) -> Vec<f64> {
        let inner_s = &s[..self.inner_dim()];
        let prev = if t == 0 {
            0.0
        } else {
            self.inner.step_loss(inner_s, t - 1, params)
        };
        let mut out = self.inner.step(inner_s, t, params);
        out.push(prev);
        out
    }

    fn step_loss(&self, s: &[f64], t: usize, params: &[f64]) -> f64 {
        let n = self.inner_dim();
        self.inner.step_loss(&s[..n], t, params) - s[n]
    }

    fn step_jacobians(&self, s: &[f64], t: usize, params: &[f64]) -> Option<StepJacobians> {
        let n = self.inner_dim();
        let p = self.param_dim();
        let inner_s = &s[..n];
        let jac = self.inner.step_jacobians(inner_s, t, params)?;
        let mut wrt_state = DMatrix::zeros(n + 1, n + 1);
        wrt_state.view_mut((0, 0), (n, n)).copy_from(&jac.wrt_state);
        let mut wrt_params = DMatrix::zeros(n + 1, p);
        wrt_params.view_mut((0, 0), (n, p)).copy_from(&jac.wrt_params);
        if t > 0 {
            let g = self.inner.loss_gradients(inner_s, t - 1, params)?;
            wrt_state.view_mut((n, 0), (1, n)).copy_from(&g.wrt_state.transpose());
            wrt_params.view_mut((n, 0), (1, p)).copy_from(&g.wrt_params.transpose());
        }
        Some(StepJacobians { wrt_state, wrt_params })
    }

    fn loss_gradients(&self, s: &[f64], t: usize, params: &[f64]) -> Option<LossGradients> {
        let n = self.inner_dim();
        let g = self.inner.loss_gradients(&s[..n], t, params)?;
        let mut wrt_state = DVector::zeros(n + 1);
        wrt_state.rows_mut(0, n).copy_from(&g.wrt_state);
        wrt_state[n] = -1.0;
        Some(LossGradients {
            wrt_state,
            wrt_params: g.wrt_params,
        })
    }

    fn has_jacobians(&self) -> bool {
        self.inner.has_jacobians()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;
    use crate::systems::{full_loss, jacobian_fd_error, make_toy2d, unroll};

    /// Stateless system replaying a fixed loss sequence.
    struct Replay(Vec<f64>);

    impl UnrolledSystem for Replay {
        fn name(&self) -> String {
            "replay".into()
        }
        fn state_dim(&self) -> usize {
            0
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn horizon(&self) -> Horizon {
            Horizon::Finite(self.0.len())
        }
        fn initial_state(&self) -> Vec<f64> {
            vec![]
        }
        fn step(&self, _: &[f64], _: usize, _: &[f64]) -> Vec<f64> {
            vec![]
        }
        fn step_loss(&self, _: &[f64], t: usize, _: &[f64]) -> f64 {
            self.0[t]
        }
    }

    fn per_step(sys: &dyn UnrolledSystem) -> Vec<f64> {
        let mut s = sys.initial_state();
        let mut out = vec![];
        for t in 0..sys.horizon().finite().unwrap() {
            s = sys.step(&s, t, &[0.0]);
            out.push(sys.step_loss(&s, t, &[0.0]));
        }
        out
    }

    #[test]
    fn differences_of_given_losses() {
        let w = telescope_wrap(Arc::new(Replay(vec![3.0, 5.0, 2.0])));
        assert_eq!(per_step(&w), vec![3.0, 2.0, -3.0]);
        assert_eq!(full_loss(&w, &[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn constant_losses() {
        let w = telescope_wrap(Arc::new(Replay(vec![1.25; 3])));
        assert_eq!(per_step(&w), vec![1.25, 0.0, 0.0]);
    }

    #[test]
    fn sum_equals_final_toy2d_loss() {
        let inner = Arc::new(make_toy2d(100).unwrap());
        let w = telescope_wrap(inner.clone());
        for i in 0..5u64 {
            let theta: Vec<f64> = RngKey::new(i).normals(2).iter().map(|z| z - 2.0).collect();
            let end = unroll(inner.as_ref(), &inner.initial_state(), &theta, 0, 100).unwrap();
            let last = inner.step_loss(&end.state, 99, &theta);
            let sum = full_loss(&w, &theta).unwrap();
            assert!((sum - last).abs() / (1.0 + last.abs()) < 1e-12);
        }
    }

    #[test]
    fn wrapped_jacobians_match_finite_differences() {
        let w = telescope_wrap(Arc::new(make_toy2d(100).unwrap()));
        for i in 0..10u64 {
            let key = RngKey::new(40 + i);
            let mut s = key.fold_in(0).normals(3);
            s[2] = 0.7;
            let theta: Vec<f64> = key.fold_in(1).normals(2).iter().map(|z| z - 2.0).collect();
            let err = jacobian_fd_error(&w, &s, (i * 7) as usize, &theta, 1e-5).unwrap();
            assert!(err < 1e-4, "point {i}: {err}");
        }
    }
}
