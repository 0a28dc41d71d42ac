//! Task registry: string ids, parameters, and construction of systems with
//! their default starting parameters and evaluation rule.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::driver::{Evaluation, OptimizerConfig};
use crate::error::{Error, Result};
use crate::rng::RngKey;
use crate::systems::{
    make_influence_balancing, make_lr_schedule_mlp, make_quadratic, make_sequence_task, make_toy2d, random_quadratic,
    telescope_wrap, LossMode, MlpLrConfig, Scenario, UnrolledSystem,
};

/// `(id, description)` for every registered task.
pub const TASKS: [(&str, &str); 7] = [
    ("quadratic", "L(θ) = ½θᵀAθ + bᵀθ spread over `reps` stateless steps"),
    ("influence", "influence balancing: linear chain whose short- and long-term responses to θ disagree"),
    ("toy2d", "gradient descent on a bumpy 2-D objective with a log-space linear LR schedule"),
    ("seq:iid", "tanh RNN next-token model on a stream of i.i.d. tokens"),
    ("seq:identical", "tanh RNN next-token model on a single repeated token"),
    ("seq:correlated", "tanh RNN next-token model on a sticky Markov token stream"),
    ("mlp_lr", "inverse-power LR schedule for an MLP trained with momentum SGD on synthetic blobs"),
];

#[derive(Clone, Debug, PartialEq)]
pub enum TaskSpec {
    Quadratic {
        dim: usize,
        reps: usize,
        /// Explicit matrix (rows); random SPD when absent.
        a: Option<Vec<Vec<f64>>>,
        b: Option<Vec<f64>>,
    },
    Influence {
        n: usize,
        p: usize,
        eval_horizon: usize,
    },
    Toy2d {
        horizon: usize,
    },
    Sequence {
        scenario: Scenario,
        seq_len: usize,
        vocab: usize,
        hidden: usize,
        init_scale: f64,
    },
    MlpLr {
        hidden: Vec<usize>,
        horizon: usize,
        n_train: usize,
        batch_size: usize,
        fixed_batch: usize,
        decay_steps: f64,
        momentum: f64,
    },
}

impl TaskSpec {
    pub fn id(&self) -> String {
        match self {
            TaskSpec::Quadratic { .. } => "quadratic".into(),
            TaskSpec::Influence { .. } => "influence".into(),
            TaskSpec::Toy2d { .. } => "toy2d".into(),
            TaskSpec::Sequence { scenario, .. } => format!("seq:{scenario}"),
            TaskSpec::MlpLr { .. } => "mlp_lr".into(),
        }
    }

    /// Task with its default parameters.
    pub fn default_for(id: &str) -> Result<TaskSpec> {
        Ok(match id {
            "quadratic" => TaskSpec::Quadratic {
                dim: 5,
                reps: 10,
                a: None,
                b: None,
            },
            "influence" => TaskSpec::Influence {
                n: 23,
                p: 10,
                eval_horizon: 1000,
            },
            "toy2d" => TaskSpec::Toy2d { horizon: 100 },
            "mlp_lr" => {
                let d = MlpLrConfig::default();
                TaskSpec::MlpLr {
                    hidden: d.hidden,
                    horizon: d.horizon,
                    n_train: d.n_train,
                    batch_size: d.batch_size,
                    fixed_batch: d.fixed_batch,
                    decay_steps: d.decay_steps,
                    momentum: d.momentum,
                }
            }
            other => match other.strip_prefix("seq:") {
                Some(sc) => TaskSpec::Sequence {
                    scenario: sc.parse()?,
                    seq_len: 100,
                    vocab: 4,
                    hidden: 4,
                    init_scale: 0.5,
                },
                None => return Err(Error::invalid(format!("unknown task id `{other}`"))),
            },
        })
    }

    /// Outer optimizer used when a spec does not name one.
    pub fn default_optimizer(&self) -> OptimizerConfig {
        match self {
            TaskSpec::Influence { .. } => OptimizerConfig::sgd(1e-4),
            _ => OptimizerConfig::adam(0.01),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub spec: TaskSpec,
    /// Replace per-step losses by differences of consecutive losses.
    pub telescope: bool,
    /// Starting parameters; task default when absent.
    pub theta0: Option<Vec<f64>>,
    /// Seed for task data (random matrices, token streams, datasets); the
    /// run seed when absent.
    pub data_seed: Option<u64>,
}

impl TaskConfig {
    pub fn new(spec: TaskSpec) -> Self {
        TaskConfig {
            spec,
            telescope: false,
            theta0: None,
            data_seed: None,
        }
    }
}

/// A constructed task.
#[derive(Clone)]
pub struct BuiltTask {
    pub system: Arc<dyn UnrolledSystem>,
    pub theta0: Vec<f64>,
    pub evaluation: Evaluation,
}

/// Builds the task; data keys derive from `data_seed` (or `run_seed`).
pub fn build_task(cfg: &TaskConfig, run_seed: u64) -> Result<BuiltTask> {
    let built = build_unwrapped(cfg, run_seed)?;
    if !cfg.telescope {
        return Ok(built);
    }
    if built.system.horizon().finite().is_none() {
        return Err(Error::invalid("telescoping needs a finite horizon"));
    }
    Ok(BuiltTask {
        system: Arc::new(telescope_wrap(built.system)),
        ..built
    })
}

/// The system `build_task` would wrap when `telescope` is set (for the MLP,
/// the fixed-batch variant), left unwrapped.
pub fn build_unwrapped(cfg: &TaskConfig, run_seed: u64) -> Result<BuiltTask> {
    let data_key = RngKey::new(cfg.data_seed.unwrap_or(run_seed)).fold_in(crate::driver::TASK_STREAM);
    let (system, default_theta): (Arc<dyn UnrolledSystem>, Vec<f64>) = match &cfg.spec {
        TaskSpec::Quadratic { dim, reps, a, b } => {
            let q = match (a, b) {
                (Some(a), Some(b)) => {
                    if a.len() != *dim || b.len() != *dim || a.iter().any(|r| r.len() != *dim) {
                        return Err(Error::invalid(format!("quadratic A must be {dim}×{dim} and b length {dim}")));
                    }
                    let flat: Vec<f64> = a.iter().flatten().copied().collect();
                    make_quadratic(DMatrix::from_row_slice(*dim, *dim, &flat), DVector::from_vec(b.clone()), *reps)?
                }
                (None, None) => random_quadratic(data_key, *dim, *reps)?,
                _ => return Err(Error::invalid("quadratic needs both `a` and `b`, or neither")),
            };
            (Arc::new(q), vec![0.0; *dim])
        }
        TaskSpec::Influence { n, p, eval_horizon } => {
            if *eval_horizon == 0 {
                return Err(Error::invalid("eval_horizon must be >= 1"));
            }
            (Arc::new(make_influence_balancing(*n, *p)?), vec![0.5])
        }
        TaskSpec::Toy2d { horizon } => (Arc::new(make_toy2d(*horizon)?), vec![0.01f64.ln(); 2]),
        TaskSpec::Sequence {
            scenario,
            seq_len,
            vocab,
            hidden,
            init_scale,
        } => {
            let task = make_sequence_task(*scenario, *seq_len, *vocab, *hidden, data_key.fold_in(0))?;
            let theta = task.random_params(data_key.fold_in(1), *init_scale);
            (Arc::new(task), theta)
        }
        TaskSpec::MlpLr {
            hidden,
            horizon,
            n_train,
            batch_size,
            fixed_batch,
            decay_steps,
            momentum,
        } => {
            let mlp = make_lr_schedule_mlp(
                MlpLrConfig {
                    hidden: hidden.clone(),
                    horizon: *horizon,
                    decay_steps: *decay_steps,
                    momentum: *momentum,
                    n_train: *n_train,
                    batch_size: *batch_size,
                    fixed_batch: *fixed_batch,
                    loss_mode: if cfg.telescope { LossMode::Fixed } else { LossMode::Minibatch },
                },
                data_key,
            )?;
            (Arc::new(mlp), vec![0.01, 0.0])
        }
    };
    let evaluation = match &cfg.spec {
        TaskSpec::Influence { eval_horizon, .. } => Evaluation::MeanOver(*eval_horizon),
        _ => Evaluation::FullProblem,
    };
    let theta0 = cfg.theta0.clone().unwrap_or(default_theta);
    if theta0.len() != system.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.param_dim(),
            got: theta0.len(),
        });
    }
    Ok(BuiltTask {
        system,
        theta0,
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registered_id_builds() {
        for (id, _) in TASKS {
            let spec = TaskSpec::default_for(id).unwrap();
            assert_eq!(spec.id(), id);
            let built = build_task(&TaskConfig::new(spec), 1).unwrap();
            assert_eq!(built.theta0.len(), built.system.param_dim());
        }
        assert!(TaskSpec::default_for("ptb").is_err());
        assert!(TaskSpec::default_for("seq:shakespeare").is_err());
    }

    #[test]
    fn data_seed_pins_task_data() {
        let mut cfg = TaskConfig::new(TaskSpec::default_for("seq:iid").unwrap());
        cfg.data_seed = Some(4);
        let a = build_task(&cfg, 1).unwrap();
        let b = build_task(&cfg, 2).unwrap();
        assert_eq!(a.theta0, b.theta0);
    }

    #[test]
    fn telescope_rejects_infinite_horizon() {
        let mut cfg = TaskConfig::new(TaskSpec::default_for("influence").unwrap());
        cfg.telescope = true;
        assert!(build_task(&cfg, 0).is_err());
    }

    #[test]
    fn explicit_quadratic() {
        let cfg = TaskConfig::new(TaskSpec::Quadratic {
            dim: 2,
            reps: 1,
            a: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            b: Some(vec![1.0, 0.0]),
        });
        let built = build_task(&cfg, 0).unwrap();
        assert_eq!(crate::systems::full_loss(built.system.as_ref(), &[0.0, 0.0]).unwrap(), 0.0);
    }
}
