//! Persistent particle ensembles and the PES / ES-Single / ES-Gen / ES-Mix
//! steps.
//!
//! Perturbations for pair `j` in re-sample epoch `e` of inner problem `p` are
//! drawn from `epoch_key(base, p, e).fold_in(j)`; particle `2j` gets `+ε` and
//! particle `2j + 1` gets `−ε`. The epoch is the unroll index for PES and
//! ES-Mix's per-unroll part, `unroll_index / M` for ES-Gen, and 0 for
//! ES-Single. Hence ES-Gen with `M = 1` draws exactly what PES draws, and
//! ES-Gen with `M ≥ ⌈T/K⌉` draws exactly what ES-Single draws.
//!
//! ES-Mix's fixed perturbation uses the ES-Single stream when `β = 0` and an
//! independent per-problem stream otherwise (with both weights non-zero the
//! two perturbations must be independent).

use rayon::prelude::*;

use super::{epoch_key, fixed_key, EstimatorConfig, EstimatorKind, GradientEstimate, RawEstimate};
use crate::error::{Error, Result};
use crate::rng::{sample_pair, RngKey};
use crate::systems::{unroll, Horizon, UnrolledSystem};

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    kind: EstimatorKind,
    n_pairs: usize,
    first_pair: u64,
    base: RngKey,
    param_dim: usize,
    horizon: Horizon,
    initial_state: Vec<f64>,
    states: Vec<Vec<f64>>,
    /// Current ε (ES-Mix: the per-unroll part ε_t). Empty until first drawn.
    perturbations: Vec<Vec<f64>>,
    /// ES-Mix fixed part ε_s. Empty for other kinds.
    fixed: Vec<Vec<f64>>,
    /// ξ.
    accumulators: Vec<Vec<f64>>,
    unroll_index: usize,
    inner_step: usize,
    problem_index: u64,
}

/// Fresh ensemble for inner problem 0.
pub fn reset_ensemble(system: &dyn UnrolledSystem, cfg: &EstimatorConfig, key: RngKey) -> Result<ParticleEnsemble> {
    ParticleEnsemble::new(system, cfg, key, 0)
}

fn draw(key: RngKey, first_pair: u64, n_pairs: usize, dim: usize, sigma: f64) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(2 * n_pairs);
    for j in 0..n_pairs as u64 {
        let (pos, neg) = sample_pair(key, first_pair + j, dim, sigma);
        rows.push(pos);
        rows.push(neg);
    }
    rows
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn axpby(alpha: f64, x: &[f64], beta: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| alpha * x + beta * y).collect()
}

impl ParticleEnsemble {
    /// Ensemble at step 0 of inner problem `problem_index`.
    pub fn new(system: &dyn UnrolledSystem, cfg: &EstimatorConfig, base: RngKey, problem_index: u64) -> Result<Self> {
        Self::for_pairs(system, cfg, base, problem_index, 0, cfg.n_pairs)
    }

    /// Ensemble holding pairs `first_pair .. first_pair + n_pairs` of a larger
    /// population; draws are identical to those the same pairs would get in
    /// the full ensemble.
    pub(crate) fn for_pairs(
        system: &dyn UnrolledSystem,
        cfg: &EstimatorConfig,
        base: RngKey,
        problem_index: u64,
        first_pair: u64,
        n_pairs: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if !cfg.kind.is_persistent() {
            return Err(Error::invalid(format!("{} does not use a persistent ensemble", cfg.kind)));
        }
        let mut ens = ParticleEnsemble {
            kind: cfg.kind,
            n_pairs,
            first_pair,
            base,
            param_dim: system.param_dim(),
            horizon: system.horizon(),
            initial_state: system.initial_state(),
            states: Vec::new(),
            perturbations: Vec::new(),
            fixed: Vec::new(),
            accumulators: Vec::new(),
            unroll_index: 0,
            inner_step: 0,
            problem_index,
        };
        ens.init_problem(cfg);
        Ok(ens)
    }

    fn init_problem(&mut self, cfg: &EstimatorConfig) {
        let n = 2 * self.n_pairs;
        let p = self.param_dim;
        self.states = vec![self.initial_state.clone(); n];
        self.unroll_index = 0;
        self.inner_step = 0;
        self.perturbations.clear();
        self.fixed.clear();
        self.accumulators = vec![vec![0.0; p]; n];
        match self.kind {
            EstimatorKind::EsSingle => {
                let key = epoch_key(self.base, self.problem_index, 0);
                self.perturbations = draw(key, self.first_pair, self.n_pairs, p, cfg.sigma);
                self.accumulators = self.perturbations.clone();
            }
            EstimatorKind::EsMix => {
                let key = if cfg.mix_beta == 0.0 {
                    epoch_key(self.base, self.problem_index, 0)
                } else {
                    fixed_key(self.base, self.problem_index)
                };
                self.fixed = draw(key, self.first_pair, self.n_pairs, p, cfg.sigma);
            }
            _ => {}
        }
    }

    /// Starts the next inner problem: states back to `s₀`, ξ cleared, and a
    /// new fixed perturbation for ES-Single / ES-Mix.
    pub fn reset(&mut self, cfg: &EstimatorConfig) {
        self.problem_index += 1;
        self.init_problem(cfg);
    }

    /// Moves every particle to step `inner_step` of the current problem by
    /// unrolling with unperturbed `params`. Accumulators stay at their reset
    /// values. Used for asynchronously phased pairs.
    pub(crate) fn warm_start(
        &mut self,
        system: &dyn UnrolledSystem,
        params: &[f64],
        cfg: &EstimatorConfig,
        inner_step: usize,
    ) -> Result<()> {
        if inner_step == 0 {
            return Ok(());
        }
        let s = unroll(system, &self.initial_state, params, 0, inner_step)?.state;
        self.states = vec![s; 2 * self.n_pairs];
        self.inner_step = inner_step;
        self.unroll_index = inner_step / cfg.trunc_len;
        Ok(())
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn n_particles(&self) -> usize {
        2 * self.n_pairs
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// Current per-particle ε (ES-Mix: ε_t); empty before the first draw.
    pub fn perturbations(&self) -> &[Vec<f64>] {
        &self.perturbations
    }

    /// ES-Mix fixed perturbations ε_s.
    pub fn fixed_perturbations(&self) -> &[Vec<f64>] {
        &self.fixed
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    pub fn unroll_index(&self) -> usize {
        self.unroll_index
    }

    pub fn inner_step(&self) -> usize {
        self.inner_step
    }

    pub fn problem_index(&self) -> u64 {
        self.problem_index
    }

    /// True once a finite-horizon problem has been unrolled to its end.
    pub fn finished(&self) -> bool {
        match self.horizon {
            Horizon::Finite(t) => self.inner_step >= t,
            Horizon::Infinite => false,
        }
    }

    fn check(&self, system: &dyn UnrolledSystem, params: &[f64], cfg: &EstimatorConfig) -> Result<()> {
        if cfg.kind != self.kind {
            return Err(Error::invalid(format!("ensemble was built for {}, not {}", self.kind, cfg.kind)));
        }
        if params.len() != self.param_dim {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim,
                got: params.len(),
            });
        }
        if system.param_dim() != self.param_dim || system.state_dim() != self.initial_state.len() {
            return Err(Error::invalid("ensemble does not belong to this system"));
        }
        if self.finished() {
            return Err(Error::invalid("inner problem is finished; reset the ensemble first"));
        }
        Ok(())
    }

    /// One partial unroll; returns the unscaled `Σᵢ cᵢ Lᵢ`. The ensemble is
    /// left untouched on error.
    pub(crate) fn step_raw(
        &mut self,
        system: &dyn UnrolledSystem,
        params: &[f64],
        cfg: &EstimatorConfig,
    ) -> Result<RawEstimate> {
        self.check(system, params, cfg)?;
        let k = match self.horizon {
            Horizon::Finite(t) => cfg.trunc_len.min(t - self.inner_step),
            Horizon::Infinite => cfg.trunc_len,
        };
        let p = self.param_dim;
        let resample_epoch = match self.kind {
            EstimatorKind::Pes | EstimatorKind::EsMix => Some(self.unroll_index),
            EstimatorKind::EsGen => {
                let m = cfg.resample_interval;
                (self.unroll_index % m == 0 || self.perturbations.is_empty()).then_some(self.unroll_index / m)
            }
            _ => None,
        };
        let (perturbations, accumulators) = match resample_epoch {
            Some(e) => {
                let key = epoch_key(self.base, self.problem_index, e as u64);
                let eps = draw(key, self.first_pair, self.n_pairs, p, cfg.sigma);
                let xi: Vec<Vec<f64>> = self.accumulators.iter().zip(&eps).map(|(x, e)| add(x, e)).collect();
                (eps, xi)
            }
            None => (self.perturbations.clone(), self.accumulators.clone()),
        };

        let (alpha, beta) = (cfg.mix_alpha, cfg.mix_beta);
        let mixed = self.kind == EstimatorKind::EsMix;
        let t0 = self.inner_step;
        let results: Vec<_> = (0..self.n_particles())
            .into_par_iter()
            .map(|i| {
                let (applied, coeff) = if mixed {
                    (
                        axpby(alpha, &self.fixed[i], beta, &perturbations[i]),
                        axpby(alpha, &self.fixed[i], beta, &accumulators[i]),
                    )
                } else {
                    (perturbations[i].clone(), accumulators[i].clone())
                };
                let theta = add(params, &applied);
                unroll(system, &self.states[i], &theta, t0, k).map(|u| (u, applied, coeff))
            })
            .collect();

        let mut raw = RawEstimate::new(p);
        let mut states = Vec::with_capacity(results.len());
        for r in results {
            let (u, applied, coeff) = r?;
            raw.add_particle(&u.loss, &coeff, applied);
            states.push(u.state);
        }
        self.states = states;
        self.perturbations = perturbations;
        self.accumulators = accumulators;
        self.inner_step += k;
        self.unroll_index += 1;
        Ok(raw)
    }

    /// One partial unroll of `K` steps (shortened at a finite horizon) with
    /// whatever sampling discipline the ensemble's kind prescribes.
    pub fn step(&mut self, system: &dyn UnrolledSystem, params: &[f64], cfg: &EstimatorConfig) -> Result<GradientEstimate> {
        let raw = self.step_raw(system, params, cfg)?;
        raw.finish(self.n_particles(), cfg.sigma_sq_eff(), self.inner_step.saturating_sub(1))
    }
}

fn kind_step(
    expected: EstimatorKind,
    system: &dyn UnrolledSystem,
    mut ensemble: ParticleEnsemble,
    params: &[f64],
    cfg: &EstimatorConfig,
) -> Result<(GradientEstimate, ParticleEnsemble)> {
    if cfg.kind != expected {
        return Err(Error::invalid(format!("{expected} step called with a {} config", cfg.kind)));
    }
    let est = ensemble.step(system, params, cfg)?;
    Ok((est, ensemble))
}

/// PES: fresh antithetic ε every unroll, `ξ ← ξ + ε`, `ĝ = Σ ξᵢLᵢ / (Nσ²)`.
pub fn pes_step(
    system: &dyn UnrolledSystem,
    ensemble: ParticleEnsemble,
    params: &[f64],
    cfg: &EstimatorConfig,
) -> Result<(GradientEstimate, ParticleEnsemble)> {
    kind_step(EstimatorKind::Pes, system, ensemble, params, cfg)
}

/// ES-Single: the ε drawn at reset is re-applied every unroll,
/// `ĝ = Σ εᵢLᵢ / (Nσ²)`.
pub fn es_single_step(
    system: &dyn UnrolledSystem,
    ensemble: ParticleEnsemble,
    params: &[f64],
    cfg: &EstimatorConfig,
) -> Result<(GradientEstimate, ParticleEnsemble)> {
    kind_step(EstimatorKind::EsSingle, system, ensemble, params, cfg)
}

/// ES-Gen: re-sample ε (and add it to ξ) whenever `unroll_index mod M = 0`.
pub fn es_gen_step(
    system: &dyn UnrolledSystem,
    ensemble: ParticleEnsemble,
    params: &[f64],
    cfg: &EstimatorConfig,
) -> Result<(GradientEstimate, ParticleEnsemble)> {
    kind_step(EstimatorKind::EsGen, system, ensemble, params, cfg)
}

/// ES-Mix: unroll with `θ + αε_s + βε_t`,
/// `ĝ = Σ (αε_s + βξ)ᵢ Lᵢ / ((α²+β²)σ²N)`.
pub fn es_mix_step(
    system: &dyn UnrolledSystem,
    ensemble: ParticleEnsemble,
    params: &[f64],
    cfg: &EstimatorConfig,
) -> Result<(GradientEstimate, ParticleEnsemble)> {
    kind_step(EstimatorKind::EsMix, system, ensemble, params, cfg)
}
