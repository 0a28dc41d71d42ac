//! Experiment runners behind the command line: one-shot estimates, variance
//! sweeps, and the named suites with their pass/fail checks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentSpec;
use crate::driver::{run_lockstep, Evaluation, MetaTrace, OptimizerConfig, PhaseInit, RunPlan};
use crate::error::{Error, Result};
use crate::estimators::{
    epoch_key, es_trunc_step, frozen_problem_estimate, EstimatorConfig, EstimatorKind, ParticleEnsemble,
};
use crate::oracles::{empirical_variance, finite_difference_grad, rtrl_forward_grad, tbptt_grad, FD_STEP};
use crate::output::{write_json, write_run, write_sidecar, write_variance_csv, Sidecar, VarianceRow};
use crate::rng::RngKey;
use crate::systems::{
    full_loss, make_influence_balancing, make_quadratic, make_sequence_task, make_toy2d, random_quadratic,
    unroll, Scenario, UnrolledSystem,
};
use crate::tasks::{build_task, build_unwrapped, TaskConfig, TaskSpec, TASKS};

pub const SUITES: [&str; 6] = ["unbiasedness", "variance", "influence", "toy2d", "telescoping", "hpo"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OneShot {
    pub task: String,
    pub estimator: String,
    pub theta: Vec<f64>,
    pub grad: Vec<f64>,
    /// Steps covered by the estimate.
    pub horizon: usize,
    /// Exact or finite-difference gradient over the same horizon, when available.
    pub reference: Option<Vec<f64>>,
}

/// Gradient at the configured starting θ: the frozen-θ sum over one whole problem
/// for finite horizons, or a single `K`-step estimate otherwise.
pub fn one_shot_estimate(spec: &ExperimentSpec) -> Result<OneShot> {
    let built = spec.build_task()?;
    let system = built.system.as_ref();
    let theta = built.theta0;
    let base = crate::rng::RngKey::new(spec.seed).fold_in(crate::driver::ESTIMATOR_STREAM);
    let cfg = &spec.estimator;
    let (grad, horizon, reference) = match system.horizon().finite() {
        Some(t) => {
            let g = frozen_problem_estimate(system, &theta, cfg, base, 0)?;
            let reference = if system.has_jacobians() {
                Some(rtrl_forward_grad(system, &theta, t)?)
            } else {
                Some(finite_difference_grad(system, &theta, FD_STEP)?)
            };
            (g, t, reference)
        }
        None => {
            let k = cfg.trunc_len;
            let g = match cfg.kind {
                EstimatorKind::EsFull => return Err(Error::InfiniteHorizon),
                EstimatorKind::EsTrunc => {
                    es_trunc_step(system, &system.initial_state(), 0, &theta, cfg, epoch_key(base, 0, 0))?.0.grad
                }
                _ => ParticleEnsemble::new(system, cfg, base, 0)?.step(system, &theta, cfg)?.grad,
            };
            let reference = system.has_jacobians().then(|| rtrl_forward_grad(system, &theta, k)).transpose()?;
            (g, k, reference)
        }
    };
    Ok(OneShot {
        task: spec.task.spec.id(),
        estimator: cfg.kind.as_str().into(),
        theta,
        grad,
        horizon,
        reference,
    })
}

/// Empirical total variance of the frozen-θ summed estimate for each `K`.
pub fn variance_sweep(
    system: &dyn UnrolledSystem,
    theta: &[f64],
    cfg: &EstimatorConfig,
    trunc_lens: &[usize],
    replicates: usize,
    base: RngKey,
) -> Result<Vec<VarianceRow>> {
    trunc_lens
        .iter()
        .map(|&k| {
            let c = EstimatorConfig {
                trunc_len: k,
                ..cfg.clone()
            };
            let rep = empirical_variance(|r| frozen_problem_estimate(system, theta, &c, base, r), replicates)?;
            Ok(VarianceRow {
                estimator: c.kind.as_str().into(),
                k,
                m: c.resample_interval,
                alpha: c.mix_alpha,
                beta: c.mix_beta,
                n_pairs: c.n_pairs,
                sigma: c.sigma,
                replicates,
                total_variance: rep.total_variance,
                mean_grad_norm: rep.mean_grad_norm(),
            })
        })
        .collect()
}

/// Variance sweep over the `[variance]` settings of an experiment.
pub fn spec_variance(spec: &ExperimentSpec) -> Result<Vec<VarianceRow>> {
    let built = spec.build_task()?;
    variance_sweep(
        built.system.as_ref(),
        &built.theta0,
        &spec.estimator,
        &spec.variance.trunc_lens,
        spec.variance.replicates,
        RngKey::new(spec.seed).fold_in(crate::driver::ESTIMATOR_STREAM),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub out: PathBuf,
    /// Smaller grids and fewer replicates, for smoke runs.
    pub quick: bool,
}

/// Runs a named suite, writing its files under `opts.out/<name>/`.
pub fn run_suite(name: &str, opts: &SuiteOptions) -> Result<SuiteReport> {
    let dir = opts.out.join(name);
    let mut report = SuiteReport {
        suite: name.to_string(),
        seed: opts.seed,
        checks: Vec::new(),
        files: Vec::new(),
    };
    match name {
        "unbiasedness" => suite_unbiasedness(opts, &dir, &mut report)?,
        "variance" => suite_variance(opts, &dir, &mut report)?,
        "influence" => suite_influence(opts, &dir, &mut report)?,
        "toy2d" => suite_toy2d(opts, &dir, &mut report)?,
        "telescoping" => suite_telescoping(opts, &dir, &mut report)?,
        "hpo" => suite_hpo(opts, &dir, &mut report)?,
        other => {
            return Err(Error::invalid(format!(
                "unknown suite `{other}` (expected one of {})",
                SUITES.join(", ")
            )))
        }
    }
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    write_sidecar(&path, &suite_meta(opts, name))?;
    report.files.push(path);
    Ok(report)
}

fn suite_meta(opts: &SuiteOptions, name: &str) -> Sidecar {
    Sidecar::new(opts.seed, format!("suite = \"{name}\"\nseed = {}\nquick = {}\n", opts.seed, opts.quick))
}

fn suite_key(opts: &SuiteOptions, salt: u64) -> RngKey {
    RngKey::new(opts.seed).fold_in(salt)
}

/// Estimator configurations whose frozen-θ sums are checked for bias.
pub fn unbiasedness_grid(sigma: f64, k: usize) -> Vec<EstimatorConfig> {
    let base = EstimatorConfig::new(EstimatorKind::EsSingle, 1, sigma, k);
    let mut v = vec![base.clone(), base.clone().with_kind(EstimatorKind::Pes)];
    for m in [1, 2, 5] {
        v.push(base.clone().with_kind(EstimatorKind::EsGen).with_resample_interval(m));
    }
    for (a, b) in [(1.0, 1.0), (0.5, 2.0)] {
        v.push(base.clone().with_kind(EstimatorKind::EsMix).with_mix(a, b));
    }
    v
}

fn label(cfg: &EstimatorConfig) -> String {
    match cfg.kind {
        EstimatorKind::EsGen => format!("es-gen(M={})", cfg.resample_interval),
        EstimatorKind::EsMix => format!("es-mix({},{})", cfg.mix_alpha, cfg.mix_beta),
        k => k.as_str().into(),
    }
}

fn suite_unbiasedness(opts: &SuiteOptions, dir: &Path, report: &mut SuiteReport) -> Result<()> {
    let replicates = if opts.quick { 5_000 } else { 100_000 };
    let q = random_quadratic(suite_key(opts, 0), 5, 10)?;
    let theta = suite_key(opts, 1).normals(5);
    let truth = crate::oracles::analytic_grad_quadratic(q.a(), q.b(), &theta);
    let mut rows = Vec::new();
    for cfg in unbiasedness_grid(0.1, 2) {
        let base = suite_key(opts, 2);
        let rep = empirical_variance(|r| frozen_problem_estimate(&q, &theta, &cfg, base, r), replicates)?;
        let se = rep.standard_errors();
        let worst = (0..5)
            .map(|i| (rep.mean_grad[i] - truth[i]).abs() / se[i])
            .fold(0.0f64, f64::max);
        report.checks.push(Check::new(
            format!("unbiased {}", label(&cfg)),
            worst < 4.0,
            format!("max |mean − (Aθ+b)| = {worst:.2} standard errors over {replicates} replicates"),
        ));
        rows.push(VarianceRow {
            estimator: cfg.kind.as_str().into(),
            k: cfg.trunc_len,
            m: cfg.resample_interval,
            alpha: cfg.mix_alpha,
            beta: cfg.mix_beta,
            n_pairs: cfg.n_pairs,
            sigma: cfg.sigma,
            replicates,
            total_variance: rep.total_variance,
            mean_grad_norm: rep.mean_grad_norm(),
        });
    }
    let path = dir.join("unbiasedness.csv");
    write_variance_csv(&path, &rows, &suite_meta(opts, "unbiasedness"))?;
    report.files.push(path);
    Ok(())
}

/// `tr(Var)` of one antithetic pair on `½θᵀAθ + bᵀθ` at `theta`.
pub fn pair_variance(a: DMatrix<f64>, b: DVector<f64>, theta: &[f64], replicates: usize, base: RngKey) -> Result<f64> {
    let q = make_quadratic(a, b, 1)?;
    let cfg = EstimatorConfig::new(EstimatorKind::EsSingle, 1, 0.1, 1);
    Ok(empirical_variance(|r| frozen_problem_estimate(&q, theta, &cfg, base, r), replicates)?.total_variance)
}

fn suite_variance(opts: &SuiteOptions, dir: &Path, report: &mut SuiteReport) -> Result<()> {
    let replicates = if opts.quick { 100 } else { 1000 };
    let ks = crate::config::DEFAULT_VARIANCE_K;
    let meta = suite_meta(opts, "variance");

    let id_reps = if opts.quick { 20_000 } else { 1_000_000 };
    let v1 = pair_variance(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1), &[1.0], id_reps, suite_key(opts, 3))?;
    report.checks.push(Check::new(
        "identity P=1",
        (7.6..=8.4).contains(&v1),
        format!("tr(Var) = {v1:.4}, target 8"),
    ));
    let v3 = pair_variance(DMatrix::identity(3, 3), DVector::zeros(3), &[1.0, 0.0, 0.0], id_reps, suite_key(opts, 4))?;
    report.checks.push(Check::new(
        "identity P=3",
        (3.8..=4.2).contains(&v3),
        format!("tr(Var) = {v3:.4}, target 4"),
    ));

    for scenario in [Scenario::Iid, Scenario::Identical, Scenario::Correlated] {
        let sys = make_sequence_task(scenario, 100, 4, 4, suite_key(opts, 5))?;
        let theta = sys.random_params(suite_key(opts, 6), 0.5);
        let mut rows = Vec::new();
        for kind in [EstimatorKind::EsSingle, EstimatorKind::Pes] {
            let cfg = EstimatorConfig::new(kind, 1, 0.01, 1);
            let sweep = variance_sweep(&sys, &theta, &cfg, &ks, replicates, suite_key(opts, 7))?;
            let vars: Vec<f64> = sweep.iter().map(|r| r.total_variance).collect();
            let (lo, hi) = vars.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
            match kind {
                EstimatorKind::EsSingle => report.checks.push(Check::new(
                    format!("es-single flat on seq:{scenario}"),
                    hi / lo < 1.5,
                    format!("max/min tr(Var) = {:.3}", hi / lo),
                )),
                _ => {
                    // tr(Var) at K=1 over tr(Var) at K=100.
                    let growth = vars[0] / vars[vars.len() - 1];
                    if scenario == Scenario::Identical {
                        report.checks.push(Check::new(
                            "pes growth on seq:identical",
                            growth >= 5.0,
                            format!("tr(Var) K=1 / K=100 = {growth:.3}"),
                        ));
                    } else {
                        report.checks.push(Check::new(
                            format!("pes growth on seq:{scenario} (informational)"),
                            true,
                            format!("tr(Var) K=1 / K=100 = {growth:.3}"),
                        ));
                    }
                }
            }
            rows.extend(sweep);
        }
        let path = dir.join(format!("variance_{scenario}.csv"));
        write_variance_csv(&path, &rows, &meta)?;
        report.files.push(path);
    }
    Ok(())
}

/// Trailing mean of the last `w` evaluation losses.
pub fn smoothed_final(trace: &MetaTrace, w: usize) -> f64 {
    let n = trace.records.len();
    let tail = &trace.records[n.saturating_sub(w)..];
    tail.iter().map(|r| r.eval_loss).sum::<f64>() / tail.len() as f64
}

fn influence_plan(kind: EstimatorKind, steps: usize, seed: u64) -> Result<RunPlan> {
    Ok(RunPlan {
        system: Arc::new(make_influence_balancing(23, 10)?),
        evaluation: Evaluation::MeanOver(1000),
        estimator: EstimatorConfig::new(kind, 2, 0.1, 1),
        optimizer: OptimizerConfig::sgd(1e-4),
        theta0: vec![0.5],
        steps,
        eval_every: 100,
        seed,
        phases: PhaseInit::Uniform,
    })
}

fn suite_influence(opts: &SuiteOptions, dir: &Path, report: &mut SuiteReport) -> Result<()> {
    let sys = make_influence_balancing(23, 10)?;
    let theta = [0.5];
    let rtrl = rtrl_forward_grad(&sys, &theta, 200)?[0];
    let burn = unroll(&sys, &sys.initial_state(), &theta, 0, 1000)?.state;
    for k in [1, 10, 100] {
        let tb = tbptt_grad(&sys, &burn, &theta, 1000, k)?[0];
        report.checks.push(Check::new(
            format!("tbptt sign K={k}"),
            tb.signum() != rtrl.signum() && tb != 0.0,
            format!("tbptt {tb:.4} vs rtrl {rtrl:.4}"),
        ));
    }
    let steps = if opts.quick { 2000 } else { 10_000 };
    let meta = suite_meta(opts, "influence");
    for (kind, name) in [(EstimatorKind::EsSingle, "es-single"), (EstimatorKind::EsTrunc, "es-trunc")] {
        let trace = run_lockstep(&influence_plan(kind, steps, opts.seed)?)?;
        let init = trace.initial_eval();
        let fin = smoothed_final(&trace, 5);
        let (ok, what) = if kind == EstimatorKind::EsSingle {
            (trace.completed() && fin * 10.0 <= init, "decreases ≥ 10×")
        } else {
            (fin > init, "increases")
        };
        report.checks.push(Check::new(
            format!("{name} loss {what}"),
            ok,
            format!("initial {init:.4e}, smoothed final {fin:.4e}"),
        ));
        let sub = dir.join(name);
        write_run(&sub, &trace, &meta)?;
        report.files.push(sub);
    }
    Ok(())
}

/// `(best value, argmin)` of the full-problem loss on an `n×n` grid over `[lo, hi]²`.
pub fn grid_search_2d(system: &dyn UnrolledSystem, lo: f64, hi: f64, n: usize) -> Result<(f64, [f64; 2])> {
    let at = |i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut best = (f64::INFINITY, [lo, lo]);
    for i in 0..n {
        for j in 0..n {
            let th = [at(i), at(j)];
            let l = full_loss(system, &th)?;
            if l < best.0 {
                best = (l, th);
            }
        }
    }
    Ok(best)
}

/// Adam 0.01, `T = 100`, `K = 10`, 50 pairs; starting at `log(0.01)` per coordinate.
pub fn toy2d_plan(kind: EstimatorKind, sigma: f64, steps: usize, seed: u64) -> Result<RunPlan> {
    Ok(RunPlan {
        system: Arc::new(make_toy2d(100)?),
        evaluation: Evaluation::FullProblem,
        estimator: EstimatorConfig::new(kind, 50, sigma, 10),
        optimizer: OptimizerConfig::adam(0.01),
        theta0: vec![0.01f64.ln(); 2],
        steps,
        eval_every: 100,
        seed,
        phases: PhaseInit::Uniform,
    })
}

fn suite_toy2d(opts: &SuiteOptions, dir: &Path, report: &mut SuiteReport) -> Result<()> {
    let sys = make_toy2d(100)?;
    let (grid_best, arg) = grid_search_2d(&sys, -3.0, 1.0, 50)?;
    let steps = if opts.quick { 1000 } else { 10_000 };
    let meta = suite_meta(opts, "toy2d");
    let mut finals = Vec::new();
    for (kind, sigma, name) in [
        (EstimatorKind::EsSingle, 0.3, "es-single"),
        (EstimatorKind::Pes, 0.3, "pes"),
        (EstimatorKind::EsTrunc, 1.0, "es-trunc"),
    ] {
        let trace = run_lockstep(&toy2d_plan(kind, sigma, steps, opts.seed)?)?;
        finals.push(trace.final_eval());
        let sub = dir.join(name);
        write_run(&sub, &trace, &meta)?;
        report.files.push(sub);
    }
    let (single, trunc) = (finals[0], finals[2]);
    report.checks.push(Check::new(
        "es-single reaches the grid optimum",
        single <= 1.1 * grid_best,
        format!("final {single:.4} vs grid best {grid_best:.4} at {arg:?}"),
    ));
    report.checks.push(Check::new(
        "truncated es ≥ 2× worse",
        trunc >= 2.0 * single,
        format!("es-trunc {trunc:.4} vs es-single {single:.4} (pes {:.4})", finals[1]),
    ));
    Ok(())
}

/// Tasks whose losses can be evaluated on a fixed batch, i.e. every
/// finite-horizon task.
pub fn telescoping_tasks() -> Vec<TaskConfig> {
    TASKS
        .iter()
        .filter(|(id, _)| *id != "influence")
        .map(|(id, _)| {
            let mut cfg = TaskConfig::new(TaskSpec::default_for(id).expect("registered"));
            cfg.telescope = true;
            cfg
        })
        .collect()
}

/// `|Σ_t p_t − L_T| / (1 + |L_T|)` for a telescoped task at `theta`.
pub fn telescoping_error(telescoped: &dyn UnrolledSystem, inner: &dyn UnrolledSystem, theta: &[f64]) -> Result<f64> {
    let t = inner.horizon().finite().ok_or(Error::InfiniteHorizon)?;
    let sum = full_loss(telescoped, theta)?;
    let end = unroll(inner, &inner.initial_state(), theta, 0, t)?.state;
    let last = inner.step_loss(&end, t - 1, theta);
    Ok((sum - last).abs() / (1.0 + last.abs()))
}

fn suite_telescoping(opts: &SuiteOptions, dir: &Path, report: &mut SuiteReport) -> Result<()> {
    let n_theta = if opts.quick { 5 } else { 20 };
    let mut rows = Vec::new();
    for cfg in telescoping_tasks() {
        let built = build_task(&cfg, opts.seed)?;
        let inner = build_unwrapped(&cfg, opts.seed)?.system;
        let mut worst = 0.0f64;
        for i in 0..n_theta {
            let noise = suite_key(opts, 100 + i as u64).normals(built.theta0.len());
            let theta: Vec<f64> = built.theta0.iter().zip(&noise).map(|(t, z)| t + 0.1 * z).collect();
            worst = worst.max(telescoping_error(built.system.as_ref(), inner.as_ref(), &theta)?);
        }
        let id = cfg.spec.id();
        report.checks.push(Check::new(
            format!("telescoping {id}"),
            worst < 1e-9,
            format!("max relative error {worst:.3e} over {n_theta} θ"),
        ));
        rows.push(serde_json::json!({ "task": id, "max_relative_error": worst, "thetas": n_theta }));
    }
    let path = dir.join("telescoping.json");
    write_json(&path, &rows)?;
    write_sidecar(&path, &suite_meta(opts, "telescoping"))?;
    report.files.push(path);
    Ok(())
}

fn suite_hpo(opts: &SuiteOptions, dir: &Path, report: &mut SuiteReport) -> Result<()> {
    let steps = if opts.quick { 30 } else { 100 };
    for kind in [EstimatorKind::EsSingle, EstimatorKind::Pes] {
        let mut spec = ExperimentSpec::new(
            opts.seed,
            TaskSpec::default_for("mlp_lr")?,
            EstimatorConfig::new(kind, 4, 0.01, 20),
        );
        spec.steps = steps;
        spec.eval_every = 10;
        let trace = spec.run()?;
        let (init, fin) = (trace.initial_eval(), trace.final_eval());
        report.checks.push(Check::new(
            format!("mlp_lr {} improves", kind.as_str()),
            trace.completed() && fin < 0.9 * init,
            format!("eval loss {init:.4} → {fin:.4}"),
        ));
        let sub = dir.join(kind.as_str());
        write_run(&sub, &trace, &Sidecar::new(opts.seed, spec.to_toml_string()))?;
        report.files.push(sub);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_spec_str;

    fn quick(dir: &Path) -> SuiteOptions {
        SuiteOptions {
            seed: 1,
            out: dir.to_path_buf(),
            quick: true,
        }
    }

    #[test]
    fn telescoping_suite_passes() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run_suite("telescoping", &quick(dir.path())).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        assert_eq!(rep.checks.len(), 6);
        assert!(dir.path().join("telescoping/telescoping.json.meta.json").exists());
    }

    #[test]
    fn unknown_suite_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_suite("benchmarks", &quick(dir.path())).is_err());
    }

    #[test]
    fn one_shot_on_quadratic_has_exact_reference() {
        let spec = parse_spec_str(
            "seed = 2\n[task]\nid = \"quadratic\"\n[estimator]\nkind = \"es-single\"\nn_pairs = 200\nsigma = 0.1\nK = 5\n",
        )
        .unwrap();
        let shot = one_shot_estimate(&spec).unwrap();
        let reference = shot.reference.unwrap();
        // 200 pairs: each coordinate within a loose Monte-Carlo band.
        let norm = reference.iter().map(|g| g * g).sum::<f64>().sqrt();
        for (g, r) in shot.grad.iter().zip(&reference) {
            assert!((g - r).abs() < 0.5 * norm + 1e-9, "{g} vs {r}");
        }
    }

    #[test]
    fn one_shot_on_infinite_horizon_uses_one_unroll() {
        let spec = parse_spec_str(
            "seed = 2\n[task]\nid = \"influence\"\n[estimator]\nkind = \"pes\"\nsigma = 0.1\nK = 3\n",
        )
        .unwrap();
        let shot = one_shot_estimate(&spec).unwrap();
        assert_eq!(shot.horizon, 3);
        assert_eq!(shot.grad.len(), 1);
        let full = spec.clone();
        let mut full = full;
        full.estimator.kind = EstimatorKind::EsFull;
        assert!(matches!(one_shot_estimate(&full), Err(Error::InfiniteHorizon)));
    }

    #[test]
    fn variance_rows_follow_the_grid() {
        let q = random_quadratic(RngKey::new(0), 2, 4).unwrap();
        let cfg = EstimatorConfig::new(EstimatorKind::Pes, 1, 0.1, 1);
        let rows = variance_sweep(&q, &[0.0, 0.0], &cfg, &[1, 2, 4], 50, RngKey::new(1)).unwrap();
        assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert!(rows.iter().all(|r| r.estimator == "pes" && r.total_variance >= 0.0));
    }

    #[test]
    fn grid_search_finds_the_quadratic_minimum() {
        let q = make_quadratic(DMatrix::identity(2, 2), DVector::from_vec(vec![-0.5, 0.5]), 1).unwrap();
        let (best, arg) = grid_search_2d(&q, -1.0, 1.0, 5).unwrap();
        assert_eq!(arg, [0.5, -0.5]);
        assert_eq!(best, -0.25);
    }
}
