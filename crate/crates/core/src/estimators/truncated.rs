//! Non-persistent estimators: full-unroll ES and truncated ES.

use rayon::prelude::*;

use super::{EstimatorConfig, GradientEstimate, RawEstimate};
use crate::error::{Error, Result};
use crate::rng::{sample_pair, RngKey};
use crate::systems::{unroll, Unroll, UnrolledSystem};

fn perturbed(params: &[f64], eps: &[f64]) -> Vec<f64> {
    params.iter().zip(eps).map(|(p, e)| p + e).collect()
}

/// Evaluates every antithetic pair from a common starting point and folds
/// the losses into `Σᵢ εᵢ Lᵢ`.
fn shared_start_estimate(
    system: &dyn UnrolledSystem,
    state: &[f64],
    t0: usize,
    k: usize,
    params: &[f64],
    cfg: &EstimatorConfig,
    key: RngKey,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let dim = system.param_dim();
    if params.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: params.len(),
        });
    }
    let results: Vec<Result<[(Unroll, Vec<f64>); 2]>> = (0..cfg.n_pairs as u64)
        .into_par_iter()
        .map(|j| {
            let (pos, neg) = sample_pair(key, j, dim, cfg.sigma);
            let up = unroll(system, state, &perturbed(params, &pos), t0, k)?;
            let un = unroll(system, state, &perturbed(params, &neg), t0, k)?;
            Ok([(up, pos), (un, neg)])
        })
        .collect();
    let mut raw = RawEstimate::new(dim);
    for pair in results {
        for (u, eps) in pair? {
            raw.add_particle(&u.loss, &eps, eps.clone());
        }
    }
    raw.finish(cfg.n_particles(), cfg.sigma_sq_eff(), t0 + k - 1)
}

/// Antithetic ES over complete unrolls `0..T` from the initial state:
/// `ĝ = (1/(Nσ²)) Σ_pairs ε (L(θ+ε) − L(θ−ε))`.
pub fn es_full(system: &dyn UnrolledSystem, params: &[f64], cfg: &EstimatorConfig, key: RngKey) -> Result<GradientEstimate> {
    let horizon = system.horizon().finite().ok_or(Error::InfiniteHorizon)?;
    shared_start_estimate(system, &system.initial_state(), 0, horizon, params, cfg, key)
}

/// One truncated-ES window: every particle unrolls `K` steps from the shared
/// `state` (entering step `t0`) with fresh perturbations drawn from `key`;
/// the returned state is `state` advanced `K` steps with unperturbed θ. The
/// window is shortened to end at a finite horizon.
pub fn es_trunc_step(
    system: &dyn UnrolledSystem,
    state: &[f64],
    t0: usize,
    params: &[f64],
    cfg: &EstimatorConfig,
    key: RngKey,
) -> Result<(GradientEstimate, Vec<f64>)> {
    let k = match system.horizon().finite() {
        Some(h) if t0 >= h => {
            return Err(Error::invalid(format!("truncated window starts at {t0}, past the horizon {h}")));
        }
        Some(h) => cfg.trunc_len.min(h - t0),
        None => cfg.trunc_len,
    };
    let est = shared_start_estimate(system, state, t0, k, params, cfg, key)?;
    let next = unroll(system, state, params, t0, k)?.state;
    Ok((est, next))
}
