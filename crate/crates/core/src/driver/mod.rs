//! Outer meta-optimization loop: estimator step, outer update, inner-problem
//! resets, and periodic evaluation at the current parameters.
//!
//! Lockstep runs keep every particle on the same inner step. Breakstep runs
//! give each antithetic pair its own ensemble, phase, and reset schedule; the
//! per-pair sums are merged exactly, so a breakstep run with every phase at 0
//! reproduces the lockstep run bit for bit.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    epoch_key, es_full, es_trunc_step, EstimatorConfig, EstimatorKind, GradientEstimate, ParticleEnsemble, RawEstimate,
};
use crate::rng::RngKey;
use crate::systems::{full_loss, loss_over, UnrolledSystem};

mod optim;

pub use optim::{adam_update, sgd_update, OptimizerConfig, OptimizerKind, OuterOptimizerState};

/// Sub-stream of the run seed that feeds the estimator.
pub const ESTIMATOR_STREAM: u64 = 0;
/// Sub-stream of the run seed that builds task data.
pub const TASK_STREAM: u64 = 1;
/// Sub-stream of the run seed that draws breakstep phases.
pub const PHASE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Lockstep,
    Breakstep,
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schedule::Lockstep => "lockstep",
            Schedule::Breakstep => "breakstep",
        })
    }
}

/// How the trace measures the current parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evaluation {
    /// Total loss of one full inner problem from the initial state.
    FullProblem,
    /// Mean per-step loss over the first `n` steps from the initial state.
    MeanOver(usize),
}

impl Evaluation {
    pub fn evaluate(self, system: &dyn UnrolledSystem, theta: &[f64]) -> Result<f64> {
        match self {
            Evaluation::FullProblem => full_loss(system, theta),
            Evaluation::MeanOver(n) => Ok(loss_over(system, theta, n)? / n as f64),
        }
    }
}

/// Breakstep phase assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseInit {
    /// Uniform over unroll boundaries `{0, K, 2K, …}` below the horizon.
    Uniform,
    /// Every pair starts at step 0.
    Zero,
}

#[derive(Clone)]
pub struct RunPlan {
    pub system: Arc<dyn UnrolledSystem>,
    pub evaluation: Evaluation,
    pub estimator: EstimatorConfig,
    pub optimizer: OptimizerConfig,
    pub theta0: Vec<f64>,
    pub steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub phases: PhaseInit,
}

impl RunPlan {
    pub fn estimator_key(&self) -> RngKey {
        RngKey::new(self.seed).fold_in(ESTIMATOR_STREAM)
    }

    fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.optimizer.validate()?;
        if self.theta0.len() != self.system.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.system.param_dim(),
                got: self.theta0.len(),
            });
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be >= 1"));
        }
        if let Evaluation::MeanOver(0) = self.evaluation {
            return Err(Error::invalid("evaluation horizon must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer_step: usize,
    pub inner_step: usize,
    pub theta: Vec<f64>,
    pub grad_norm: f64,
    pub eval_loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetaTrace {
    pub records: Vec<TraceRecord>,
    pub final_theta: Vec<f64>,
    pub best_eval_loss: f64,
    pub wall_time_secs: f64,
    /// Set when the run stopped early; records cover the steps before it.
    pub failure: Option<String>,
}

impl MetaTrace {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn initial_eval(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.eval_loss)
    }

    pub fn final_eval(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.eval_loss)
    }
}

enum Stepper {
    Full {
        problem: u64,
    },
    Trunc {
        state: Vec<f64>,
        t: usize,
        unroll: u64,
        problem: u64,
    },
    Lock(ParticleEnsemble),
    Break(Vec<ParticleEnsemble>),
}

impl Stepper {
    fn new(plan: &RunPlan, schedule: Schedule) -> Result<Self> {
        let sys = plan.system.as_ref();
        let cfg = &plan.estimator;
        let base = plan.estimator_key();
        match (schedule, cfg.kind) {
            (Schedule::Lockstep, EstimatorKind::EsFull) => {
                sys.horizon().finite().ok_or(Error::InfiniteHorizon)?;
                Ok(Stepper::Full { problem: 0 })
            }
            (Schedule::Lockstep, EstimatorKind::EsTrunc) => Ok(Stepper::Trunc {
                state: sys.initial_state(),
                t: 0,
                unroll: 0,
                problem: 0,
            }),
            (Schedule::Lockstep, _) => Ok(Stepper::Lock(ParticleEnsemble::new(sys, cfg, base, 0)?)),
            (Schedule::Breakstep, kind) if !kind.is_persistent() => {
                Err(Error::invalid(format!("breakstep needs a persistent estimator, not {kind}")))
            }
            (Schedule::Breakstep, _) => {
                let horizon = sys.horizon().finite().ok_or_else(|| {
                    Error::invalid("breakstep phases need a finite horizon")
                })?;
                let n_unrolls = horizon.div_ceil(cfg.trunc_len);
                let phase_key = RngKey::new(plan.seed).fold_in(PHASE_STREAM);
                let mut pairs = Vec::with_capacity(cfg.n_pairs);
                for j in 0..cfg.n_pairs as u64 {
                    let mut ens = ParticleEnsemble::for_pairs(sys, cfg, base, 0, j, 1)?;
                    let slot = match plan.phases {
                        PhaseInit::Zero => 0,
                        PhaseInit::Uniform => {
                            let u = phase_key.fold_in(j).uniforms(1)[0];
                            ((u * n_unrolls as f64) as usize).min(n_unrolls - 1)
                        }
                    };
                    ens.warm_start(sys, &plan.theta0, cfg, slot * cfg.trunc_len)?;
                    pairs.push(ens);
                }
                Ok(Stepper::Break(pairs))
            }
        }
    }

    /// One estimate; returns it with the inner step reached.
    fn estimate(
        &mut self,
        system: &dyn UnrolledSystem,
        theta: &[f64],
        cfg: &EstimatorConfig,
        base: RngKey,
    ) -> Result<(GradientEstimate, usize)> {
        let horizon = system.horizon().finite();
        match self {
            Stepper::Full { problem } => {
                let est = es_full(system, theta, cfg, epoch_key(base, *problem, 0))?;
                *problem += 1;
                Ok((est, horizon.unwrap_or(0)))
            }
            Stepper::Trunc {
                state,
                t,
                unroll,
                problem,
            } => {
                if horizon.is_some_and(|h| *t >= h) {
                    *state = system.initial_state();
                    *t = 0;
                    *unroll = 0;
                    *problem += 1;
                }
                let (est, next) = es_trunc_step(system, state, *t, theta, cfg, epoch_key(base, *problem, *unroll))?;
                *t += horizon.map_or(cfg.trunc_len, |h| cfg.trunc_len.min(h - *t));
                *state = next;
                *unroll += 1;
                Ok((est, *t))
            }
            Stepper::Lock(ens) => {
                if ens.finished() {
                    ens.reset(cfg);
                }
                let est = ens.step(system, theta, cfg)?;
                Ok((est, ens.inner_step()))
            }
            Stepper::Break(pairs) => {
                let raws: Vec<Result<RawEstimate>> = pairs
                    .par_iter_mut()
                    .map(|ens| {
                        if ens.finished() {
                            ens.reset(cfg);
                        }
                        ens.step_raw(system, theta, cfg)
                    })
                    .collect();
                let mut total = RawEstimate::new(system.param_dim());
                for r in raws {
                    total.append(r?);
                }
                let inner = pairs[0].inner_step();
                let est = total.finish(cfg.n_particles(), cfg.sigma_sq_eff(), inner.saturating_sub(1))?;
                Ok((est, inner))
            }
        }
    }
}

fn run(plan: &RunPlan, schedule: Schedule) -> Result<MetaTrace> {
    plan.validate()?;
    let started = Instant::now();
    let system = plan.system.as_ref();
    let base = plan.estimator_key();
    let mut stepper = Stepper::new(plan, schedule)?;
    let mut opt = OuterOptimizerState::new(plan.optimizer.clone(), plan.theta0.len())?;
    let mut theta = plan.theta0.clone();

    let mut records = vec![TraceRecord {
        outer_step: 0,
        inner_step: 0,
        theta: theta.clone(),
        grad_norm: 0.0,
        eval_loss: plan.evaluation.evaluate(system, &theta)?,
    }];
    let mut failure = None;
    for outer in 1..=plan.steps {
        let step = stepper
            .estimate(system, &theta, &plan.estimator, base)
            .and_then(|(est, inner)| Ok((opt.update(&est.grad, &theta)?, est.norm(), inner)));
        let (next, grad_norm, inner) = match step {
            Ok(v) => v,
            Err(e) => {
                failure = Some(format!("outer step {outer}: {e}"));
                break;
            }
        };
        theta = next;
        if outer % plan.eval_every == 0 || outer == plan.steps {
            match plan.evaluation.evaluate(system, &theta) {
                Ok(eval_loss) => records.push(TraceRecord {
                    outer_step: outer,
                    inner_step: inner,
                    theta: theta.clone(),
                    grad_norm,
                    eval_loss,
                }),
                Err(e) => {
                    failure = Some(format!("evaluation after outer step {outer}: {e}"));
                    break;
                }
            }
        }
    }
    let best_eval_loss = records.iter().map(|r| r.eval_loss).fold(f64::INFINITY, f64::min);
    Ok(MetaTrace {
        records,
        final_theta: theta,
        best_eval_loss,
        wall_time_secs: started.elapsed().as_secs_f64(),
        failure,
    })
}

/// All particles start each inner problem together at step 0 and advance in
/// sync; the ensemble resets when it reaches the horizon (never, for an
/// infinite horizon).
pub fn run_lockstep(plan: &RunPlan) -> Result<MetaTrace> {
    run(plan, Schedule::Lockstep)
}

/// Each antithetic pair runs its own inner problem, starting at a phase drawn
/// per [`RunPlan::phases`] (particles are brought to that phase by an
/// unperturbed unroll) and resetting independently. Only persistent
/// estimators on finite horizons are supported.
pub fn run_breakstep(plan: &RunPlan) -> Result<MetaTrace> {
    run(plan, Schedule::Breakstep)
}

pub fn run_schedule(plan: &RunPlan, schedule: Schedule) -> Result<MetaTrace> {
    run(plan, schedule)
}
