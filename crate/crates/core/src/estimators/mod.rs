//! Evolution-strategies gradient estimators over antithetic particle
//! ensembles: full-unroll ES, truncated ES, PES, ES-Single, the re-sampling
//! interval generalization (ES-Gen) and the α/β mixture (ES-Mix).
//!
//! Every estimator has the form `ĝ = (1/(N σ²_eff)) Σᵢ cᵢ Lᵢ` where `Lᵢ` is the
//! loss of particle `i` over the current unroll and `cᵢ` its coefficient:
//!
//! | kind      | applied perturbation   | coefficient `cᵢ`     | `σ²_eff`          |
//! |-----------|------------------------|----------------------|-------------------|
//! | ES-Full   | `ε` (fresh per call)   | `ε`                  | `σ²`              |
//! | ES-Trunc  | `ε` (fresh per call)   | `ε`                  | `σ²`              |
//! | PES       | `ε_t` (fresh per unroll) | `ξ = Σ ε_τ`        | `σ²`              |
//! | ES-Single | `ε` (fixed per problem)| `ε`                  | `σ²`              |
//! | ES-Gen    | `ε` (fresh every M unrolls) | `ξ`             | `σ²`              |
//! | ES-Mix    | `α ε_s + β ε_t`        | `α ε_s + β ξ`        | `(α²+β²) σ²`      |
//!
//! Sums `Σᵢ cᵢ Lᵢ` are accumulated exactly (see [`crate::exact`]) so estimates
//! are independent of thread count and per-unroll estimates can be summed over
//! a problem without rounding drift.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::rng::RngKey;

mod ensemble;
mod truncated;

pub use ensemble::{es_gen_step, es_mix_step, es_single_step, pes_step, reset_ensemble, ParticleEnsemble};
pub use truncated::{es_full, es_trunc_step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    EsFull,
    EsTrunc,
    Pes,
    EsSingle,
    EsGen,
    EsMix,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::EsFull,
        EstimatorKind::EsTrunc,
        EstimatorKind::Pes,
        EstimatorKind::EsSingle,
        EstimatorKind::EsGen,
        EstimatorKind::EsMix,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::EsFull => "es-full",
            EstimatorKind::EsTrunc => "es-trunc",
            EstimatorKind::Pes => "pes",
            EstimatorKind::EsSingle => "es-single",
            EstimatorKind::EsGen => "es-gen",
            EstimatorKind::EsMix => "es-mix",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            EstimatorKind::EsFull => "antithetic ES over complete unrolls from the initial state",
            EstimatorKind::EsTrunc => "ES on K-step windows from a shared state advanced with unperturbed params",
            EstimatorKind::Pes => "persistent particles, fresh perturbation each unroll, accumulated coefficients",
            EstimatorKind::EsSingle => "persistent particles, one perturbation per inner problem",
            EstimatorKind::EsGen => "persistent particles, perturbation re-sampled every M unrolls",
            EstimatorKind::EsMix => "α·(fixed perturbation) + β·(per-unroll perturbation)",
        }
    }

    /// Whether the estimator keeps per-particle state across unrolls.
    pub fn is_persistent(self) -> bool {
        !matches!(self, EstimatorKind::EsFull | EstimatorKind::EsTrunc)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown estimator kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Antithetic pairs; the ensemble has `N = 2·n_pairs` particles.
    pub n_pairs: usize,
    pub sigma: f64,
    /// Steps per partial unroll (K).
    pub trunc_len: usize,
    /// ES-Gen: unrolls between re-samples (M).
    pub resample_interval: usize,
    /// ES-Mix weight on the fixed perturbation.
    pub mix_alpha: f64,
    /// ES-Mix weight on the per-unroll perturbation.
    pub mix_beta: f64,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind, n_pairs: usize, sigma: f64, trunc_len: usize) -> Self {
        EstimatorConfig {
            kind,
            n_pairs,
            sigma,
            trunc_len,
            resample_interval: 1,
            mix_alpha: 1.0,
            mix_beta: 1.0,
        }
    }

    pub fn with_resample_interval(mut self, m: usize) -> Self {
        self.resample_interval = m;
        self
    }

    pub fn with_mix(mut self, alpha: f64, beta: f64) -> Self {
        self.mix_alpha = alpha;
        self.mix_beta = beta;
        self
    }

    pub fn with_kind(mut self, kind: EstimatorKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn n_particles(&self) -> usize {
        2 * self.n_pairs
    }

    /// `σ²`, or `(α²+β²)σ²` for ES-Mix.
    pub fn sigma_sq_eff(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        match self.kind {
            EstimatorKind::EsMix => (self.mix_alpha * self.mix_alpha + self.mix_beta * self.mix_beta) * s2,
            _ => s2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.n_pairs == 0 {
            return Err(Error::invalid("n_pairs must be >= 1"));
        }
        if self.trunc_len == 0 {
            return Err(Error::invalid("truncation length K must be >= 1"));
        }
        if self.resample_interval == 0 {
            return Err(Error::invalid("re-sampling interval M must be >= 1"));
        }
        if self.kind == EstimatorKind::EsMix {
            let (a, b) = (self.mix_alpha, self.mix_beta);
            if !(a.is_finite() && b.is_finite()) || a * a + b * b == 0.0 {
                return Err(Error::invalid(format!("mixing weights must be finite and not both zero, got ({a}, {b})")));
            }
        }
        Ok(())
    }
}

/// Key for the perturbations of re-sample `epoch` in inner problem
/// `problem_index`. Pair `j` draws from `epoch_key(..).fold_in(j)`.
pub fn epoch_key(base: RngKey, problem_index: u64, epoch: u64) -> RngKey {
    base.fold_in(problem_index).fold_in(epoch)
}

/// Key for ES-Mix's per-problem perturbation when it must be independent of
/// the per-unroll stream.
pub(crate) fn fixed_key(base: RngKey, problem_index: u64) -> RngKey {
    base.fold_in(problem_index).fold_in(u64::MAX)
}

#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub per_particle_losses: Vec<f64>,
    /// Perturbation added to θ for each particle during this unroll.
    pub perturbations_used: Vec<Vec<f64>>,
    pub mean_loss: f64,
    /// Population standard deviation of the particle losses.
    pub loss_spread: f64,
    exact: Vec<ExactSum>,
}

impl GradientEstimate {
    /// Exact (unrounded) value of each gradient coordinate.
    pub fn exact(&self) -> &[ExactSum] {
        &self.exact
    }

    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Unscaled `Σᵢ cᵢ Lᵢ` for a set of particles; several of these (e.g. one per
/// independently phased pair) combine into one estimate.
#[derive(Clone, Debug)]
pub(crate) struct RawEstimate {
    pub weighted: Vec<ExactSum>,
    pub losses: Vec<f64>,
    pub perturbations: Vec<Vec<f64>>,
}

impl RawEstimate {
    pub fn new(dim: usize) -> Self {
        RawEstimate {
            weighted: vec![ExactSum::new(); dim],
            losses: Vec::new(),
            perturbations: Vec::new(),
        }
    }

    /// Adds one particle with exact loss `loss` and coefficient `coeff`.
    pub fn add_particle(&mut self, loss: &ExactSum, coeff: &[f64], applied: Vec<f64>) {
        for (w, &c) in self.weighted.iter_mut().zip(coeff) {
            w.add_scaled(loss, c);
        }
        self.losses.push(loss.value());
        self.perturbations.push(applied);
    }

    pub fn append(&mut self, other: RawEstimate) {
        for (w, o) in self.weighted.iter_mut().zip(&other.weighted) {
            w.merge(o);
        }
        self.losses.extend(other.losses);
        self.perturbations.extend(other.perturbations);
    }

    /// Scales by `1/(n_particles · σ²_eff)`.
    pub fn finish(self, n_particles: usize, sigma_sq_eff: f64, step: usize) -> Result<GradientEstimate> {
        let scale = 1.0 / (n_particles as f64 * sigma_sq_eff);
        let exact: Vec<ExactSum> = self.weighted.iter().map(|w| w.scaled(scale)).collect();
        let grad: Vec<f64> = exact.iter().map(ExactSum::value).collect();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure {
                step,
                what: "non-finite gradient estimate".into(),
            });
        }
        let n = self.losses.len().max(1) as f64;
        let mean_loss = self.losses.iter().sum::<f64>() / n;
        let loss_spread = (self.losses.iter().map(|l| (l - mean_loss).powi(2)).sum::<f64>() / n).sqrt();
        Ok(GradientEstimate {
            grad,
            per_particle_losses: self.losses,
            perturbations_used: self.perturbations,
            mean_loss,
            loss_spread,
            exact,
        })
    }
}

/// Exact running sum of gradient estimates.
#[derive(Clone, Debug, Default)]
pub struct EstimateSum {
    parts: Vec<ExactSum>,
    count: usize,
}

impl EstimateSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, est: &GradientEstimate) {
        if self.parts.is_empty() {
            self.parts = vec![ExactSum::new(); est.exact.len()];
        }
        for (p, e) in self.parts.iter_mut().zip(&est.exact) {
            p.merge(e);
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn value(&self) -> Vec<f64> {
        self.parts.iter().map(ExactSum::value).collect()
    }
}

/// Summed estimate over one complete inner problem with θ held fixed.
///
/// Persistent estimators start a fresh ensemble at `problem_index` and step it
/// to the horizon; truncated ES walks its shared state through the problem;
/// full ES is a single call. Keys follow [`epoch_key`], so for example the
/// ES-Single sum and the ES-Full value coincide bit for bit.
pub fn frozen_problem_estimate(
    system: &dyn crate::systems::UnrolledSystem,
    params: &[f64],
    cfg: &EstimatorConfig,
    base: RngKey,
    problem_index: u64,
) -> Result<Vec<f64>> {
    let horizon = system.horizon().finite().ok_or(Error::InfiniteHorizon)?;
    let mut sum = EstimateSum::new();
    match cfg.kind {
        EstimatorKind::EsFull => {
            sum.add(&es_full(system, params, cfg, epoch_key(base, problem_index, 0))?);
        }
        EstimatorKind::EsTrunc => {
            let mut state = system.initial_state();
            let mut t = 0;
            let mut u = 0;
            while t < horizon {
                let (est, next) = es_trunc_step(system, &state, t, params, cfg, epoch_key(base, problem_index, u))?;
                sum.add(&est);
                state = next;
                t += cfg.trunc_len.min(horizon - t);
                u += 1;
            }
        }
        _ => {
            let mut ens = ParticleEnsemble::new(system, cfg, base, problem_index)?;
            while !ens.finished() {
                sum.add(&ens.step(system, params, cfg)?);
            }
        }
    }
    Ok(sum.value())
}
