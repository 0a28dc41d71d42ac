//! Quadratic fixture `L(θ) = ½θᵀAθ + bᵀθ`, spread evenly over `reps` steps
//! with no state.

use nalgebra::{DMatrix, DVector};

use super::{Horizon, LossGradients, StepJacobians, UnrolledSystem};
use crate::error::{Error, Result};
use crate::rng::RngKey;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
    reps: usize,
}

pub fn make_quadratic(a: DMatrix<f64>, b: DVector<f64>, reps: usize) -> Result<Quadratic> {
    if !a.is_square() {
        return Err(Error::invalid("quadratic matrix must be square"));
    }
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("quadratic needs at least one parameter"));
    }
    if reps == 0 {
        return Err(Error::invalid("quadratic reps must be >= 1"));
    }
    let asym = (&a - a.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!("quadratic matrix is not symmetric (max |A - Aᵀ| = {asym:e})")));
    }
    Ok(Quadratic { a, b, reps })
}

/// Random `dim`-dimensional quadratic with symmetric positive-definite `A`
/// (`A = MᵀM/dim + I`, `M` standard normal) and standard-normal `b`.
pub fn random_quadratic(key: RngKey, dim: usize, reps: usize) -> Result<Quadratic> {
    if dim == 0 {
        return Err(Error::invalid("quadratic needs at least one parameter"));
    }
    let m = DMatrix::from_vec(dim, dim, key.fold_in(0).normals(dim * dim));
    let mut a = m.transpose() * &m / dim as f64 + DMatrix::identity(dim, dim);
    // Exact symmetry.
    a = (&a + a.transpose()) * 0.5;
    let b = DVector::from_vec(key.fold_in(1).normals(dim));
    make_quadratic(a, b, reps)
}

impl Quadratic {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn total_loss(&self, theta: &[f64]) -> f64 {
        let th = DVector::from_column_slice(theta);
        0.5 * th.dot(&(&self.a * &th)) + self.b.dot(&th)
    }
}

impl UnrolledSystem for Quadratic {
    fn name(&self) -> String {
        format!("quadratic(P={},reps={})", self.b.len(), self.reps)
    }

    fn state_dim(&self) -> usize {
        0
    }

    fn param_dim(&self) -> usize {
        self.b.len()
    }

    fn horizon(&self) -> Horizon {
        Horizon::Finite(self.reps)
    }

    fn initial_state(&self) -> Vec<f64> {
        Vec::new()
    }

    fn step(&self, _s: &[f64], _t: usize, _params: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn step_loss(&self, _s: &[f64], _t: usize, params: &[f64]) -> f64 {
        self.total_loss(params) / self.reps as f64
    }

    fn step_jacobians(&self, _s: &[f64], _t: usize, _params: &[f64]) -> Option<StepJacobians> {
        let p = self.param_dim();
        Some(StepJacobians {
            wrt_state: DMatrix::zeros(0, 0),
            wrt_params: DMatrix::zeros(0, p),
        })
    }

    fn loss_gradients(&self, _s: &[f64], _t: usize, params: &[f64]) -> Option<LossGradients> {
        let th = DVector::from_column_slice(params);
        Some(LossGradients {
            wrt_state: DVector::zeros(0),
            wrt_params: (&self.a * th + &self.b) / self.reps as f64,
        })
    }

    fn has_jacobians(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{full_loss, jacobian_fd_error};

    #[test]
    fn scalar_quadratic() {
        let sys = make_quadratic(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1), 1).unwrap();
        assert_eq!(full_loss(&sys, &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn origin_evaluation() {
        let sys = make_quadratic(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0]), 3).unwrap();
        assert_eq!(full_loss(&sys, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn reps_partition_total_loss() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![0.25, -1.0]);
        let one = make_quadratic(a.clone(), b.clone(), 1).unwrap();
        let four = make_quadratic(a, b, 4).unwrap();
        let theta = [0.7, -0.2];
        let l1 = full_loss(&one, &theta).unwrap();
        let l4 = full_loss(&four, &theta).unwrap();
        assert!((l1 - l4).abs() <= 2.0 * f64::EPSILON * l1.abs());
    }

    #[test]
    fn rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(make_quadratic(a, DVector::zeros(2), 1).is_err());
    }

    #[test]
    fn random_quadratic_is_symmetric() {
        let q = random_quadratic(RngKey::new(4), 5, 3).unwrap();
        assert_eq!(q.a(), &q.a().transpose());
        assert_eq!(q.param_dim(), 5);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let q = random_quadratic(RngKey::new(8), 3, 2).unwrap();
        for i in 0..10u64 {
            let theta = RngKey::new(i).normals(3);
            assert!(jacobian_fd_error(&q, &[], 0, &theta, 1e-5).unwrap() < 1e-4);
        }
    }
}
