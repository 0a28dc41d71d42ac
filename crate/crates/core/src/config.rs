//! Experiment specs: a strict TOML schema, resolved defaults, and conversion
//! into a [`RunPlan`].
//!
//! ```toml
//! seed = 7
//! steps = 500
//! schedule = "lockstep"
//!
//! [task]
//! id = "influence"
//!
//! [estimator]
//! kind = "es-single"
//! n_pairs = 2
//! sigma = 0.1
//! K = 10
//! ```
//!
//! `seed`, `estimator.sigma` and `estimator.K` have no defaults. Unknown keys,
//! and keys that the chosen task or estimator does not use, are errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::driver::{run_schedule, MetaTrace, OptimizerConfig, OptimizerKind, PhaseInit, RunPlan, Schedule};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::tasks::{build_task, BuiltTask, TaskConfig, TaskSpec};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_EVAL_EVERY: usize = 100;
pub const DEFAULT_REPLICATES: usize = 1000;
pub const DEFAULT_VARIANCE_K: [usize; 7] = [1, 2, 5, 10, 20, 50, 100];

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceSettings {
    pub replicates: usize,
    /// Truncation lengths to sweep.
    pub trunc_lens: Vec<usize>,
}

impl Default for VarianceSettings {
    fn default() -> Self {
        VarianceSettings {
            replicates: DEFAULT_REPLICATES,
            trunc_lens: DEFAULT_VARIANCE_K.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub task: TaskConfig,
    pub estimator: EstimatorConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub phases: PhaseInit,
    pub steps: usize,
    pub eval_every: usize,
    pub out: Option<PathBuf>,
    pub variance: VarianceSettings,
}

impl ExperimentSpec {
    /// Spec with default task, optimizer and run settings.
    pub fn new(seed: u64, task: TaskSpec, estimator: EstimatorConfig) -> Self {
        let optimizer = task.default_optimizer();
        ExperimentSpec {
            seed,
            task: TaskConfig::new(task),
            estimator,
            optimizer,
            schedule: Schedule::Lockstep,
            phases: PhaseInit::Uniform,
            steps: DEFAULT_STEPS,
            eval_every: DEFAULT_EVAL_EVERY,
            out: None,
            variance: VarianceSettings::default(),
        }
    }

    pub fn build_task(&self) -> Result<BuiltTask> {
        build_task(&self.task, self.seed)
    }

    pub fn plan(&self) -> Result<RunPlan> {
        let built = self.build_task()?;
        Ok(RunPlan {
            system: built.system,
            evaluation: built.evaluation,
            estimator: self.estimator.clone(),
            optimizer: self.optimizer.clone(),
            theta0: built.theta0,
            steps: self.steps,
            eval_every: self.eval_every,
            seed: self.seed,
            phases: self.phases,
        })
    }

    pub fn run(&self) -> Result<MetaTrace> {
        run_schedule(&self.plan()?, self.schedule)
    }

    /// Serializes every resolved field; parsing the output yields an equal spec.
    pub fn to_toml_string(&self) -> String {
        let mut root = Table::new();
        root.insert("seed".into(), seed_value(self.seed));
        root.insert("steps".into(), int(self.steps));
        root.insert("eval_every".into(), int(self.eval_every));
        root.insert("schedule".into(), Value::String(self.schedule.to_string()));
        if self.schedule == Schedule::Breakstep {
            let p = match self.phases {
                PhaseInit::Uniform => "uniform",
                PhaseInit::Zero => "zero",
            };
            root.insert("phases".into(), Value::String(p.into()));
        }
        if let Some(out) = &self.out {
            root.insert("out".into(), Value::String(out.display().to_string()));
        }
        root.insert("task".into(), Value::Table(task_table(&self.task)));

        let e = &self.estimator;
        let mut est = Table::new();
        est.insert("kind".into(), Value::String(e.kind.as_str().into()));
        est.insert("n_pairs".into(), int(e.n_pairs));
        est.insert("sigma".into(), Value::Float(e.sigma));
        est.insert("K".into(), int(e.trunc_len));
        match e.kind {
            EstimatorKind::EsGen => {
                est.insert("M".into(), int(e.resample_interval));
            }
            EstimatorKind::EsMix => {
                est.insert("alpha".into(), Value::Float(e.mix_alpha));
                est.insert("beta".into(), Value::Float(e.mix_beta));
            }
            _ => {}
        }
        root.insert("estimator".into(), Value::Table(est));

        let o = &self.optimizer;
        let mut opt = Table::new();
        opt.insert("kind".into(), Value::String(o.kind.to_string()));
        opt.insert("lr".into(), Value::Float(o.lr));
        if o.kind == OptimizerKind::Adam {
            opt.insert("beta1".into(), Value::Float(o.beta1));
            opt.insert("beta2".into(), Value::Float(o.beta2));
            opt.insert("eps".into(), Value::Float(o.eps));
        }
        root.insert("optimizer".into(), Value::Table(opt));

        let mut var = Table::new();
        var.insert("replicates".into(), int(self.variance.replicates));
        var.insert(
            "K".into(),
            Value::Array(self.variance.trunc_lens.iter().map(|&k| int(k)).collect()),
        );
        root.insert("variance".into(), Value::Table(var));
        toml::to_string(&root).expect("plain tables always serialize")
    }
}

fn int(x: usize) -> Value {
    Value::Integer(x as i64)
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

fn seed_value(seed: u64) -> Value {
    match i64::try_from(seed) {
        Ok(s) => Value::Integer(s),
        Err(_) => Value::String(seed.to_string()),
    }
}

fn task_table(cfg: &TaskConfig) -> Table {
    let mut t = Table::new();
    t.insert("id".into(), Value::String(cfg.spec.id()));
    t.insert("telescope".into(), Value::Boolean(cfg.telescope));
    if let Some(theta) = &cfg.theta0 {
        t.insert("theta0".into(), floats(theta));
    }
    if let Some(s) = cfg.data_seed {
        t.insert("data_seed".into(), seed_value(s));
    }
    match &cfg.spec {
        TaskSpec::Quadratic { dim, reps, a, b } => {
            t.insert("dim".into(), int(*dim));
            t.insert("reps".into(), int(*reps));
            if let (Some(a), Some(b)) = (a, b) {
                t.insert("a".into(), Value::Array(a.iter().map(|r| floats(r)).collect()));
                t.insert("b".into(), floats(b));
            }
        }
        TaskSpec::Influence { n, p, eval_horizon } => {
            t.insert("n".into(), int(*n));
            t.insert("p".into(), int(*p));
            t.insert("eval_horizon".into(), int(*eval_horizon));
        }
        TaskSpec::Toy2d { horizon } => {
            t.insert("horizon".into(), int(*horizon));
        }
        TaskSpec::Sequence {
            seq_len,
            vocab,
            hidden,
            init_scale,
            ..
        } => {
            t.insert("seq_len".into(), int(*seq_len));
            t.insert("vocab".into(), int(*vocab));
            t.insert("hidden".into(), int(*hidden));
            t.insert("init_scale".into(), Value::Float(*init_scale));
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
            t.insert("hidden".into(), Value::Array(hidden.iter().map(|&h| int(h)).collect()));
            t.insert("horizon".into(), int(*horizon));
            t.insert("n_train".into(), int(*n_train));
            t.insert("batch_size".into(), int(*batch_size));
            t.insert("fixed_batch".into(), int(*fixed_batch));
            t.insert("decay_steps".into(), Value::Float(*decay_steps));
            t.insert("momentum".into(), Value::Float(*momentum));
        }
    }
    t
}

/// Reads and parses a spec file.
pub fn parse_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_spec_str(&text)
}

pub fn parse_spec_str(text: &str) -> Result<ExperimentSpec> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.message()))?;
    let mut root = Section::new("", &table);
    root.allow(&[
        "seed", "steps", "eval_every", "schedule", "phases", "out", "task", "estimator", "optimizer", "variance",
    ])?;

    let seed = root.req_u64("seed")?;
    let steps = root.opt_usize("steps")?.unwrap_or(DEFAULT_STEPS);
    let eval_every = root.opt_usize("eval_every")?.unwrap_or(DEFAULT_EVAL_EVERY);
    if eval_every == 0 {
        return Err(Error::config("eval_every", "must be >= 1"));
    }
    let schedule = match root.opt_str("schedule")? {
        None | Some("lockstep") => Schedule::Lockstep,
        Some("breakstep") => Schedule::Breakstep,
        Some(other) => return Err(root.bad("schedule", format!("expected `lockstep` or `breakstep`, got `{other}`"))),
    };
    let phases = match root.opt_str("phases")? {
        None | Some("uniform") => PhaseInit::Uniform,
        Some("zero") => PhaseInit::Zero,
        Some(other) => return Err(root.bad("phases", format!("expected `uniform` or `zero`, got `{other}`"))),
    };
    if schedule == Schedule::Lockstep && root.has("phases") {
        return Err(root.bad("phases", "only used with schedule = \"breakstep\""));
    }
    let out = root.opt_str("out")?.map(PathBuf::from);

    let task = {
        let mut sec = root.req_sub("task")?;
        let t = parse_task(&mut sec)?;
        sec.finish()?;
        t
    };
    let estimator = {
        let mut sec = root.req_sub("estimator")?;
        let e = parse_estimator(&mut sec)?;
        sec.finish()?;
        e
    };
    let optimizer = match root.opt_sub("optimizer")? {
        Some(mut sec) => {
            let o = parse_optimizer(&mut sec, &task.spec)?;
            sec.finish()?;
            o
        }
        None => task.spec.default_optimizer(),
    };
    let variance = match root.opt_sub("variance")? {
        Some(mut sec) => {
            sec.allow(&["replicates", "K"])?;
            let d = VarianceSettings::default();
            let replicates = sec.opt_usize("replicates")?.unwrap_or(d.replicates);
            if replicates < 2 {
                return Err(sec.bad("replicates", "must be >= 2"));
            }
            let trunc_lens = sec.opt_usize_list("K")?.unwrap_or(d.trunc_lens);
            if trunc_lens.is_empty() || trunc_lens.contains(&0) {
                return Err(sec.bad("K", "must be a non-empty list of positive lengths"));
            }
            sec.finish()?;
            VarianceSettings { replicates, trunc_lens }
        }
        None => VarianceSettings::default(),
    };
    root.finish()?;

    Ok(ExperimentSpec {
        seed,
        task,
        estimator,
        optimizer,
        schedule,
        phases,
        steps,
        eval_every,
        out,
        variance,
    })
}

fn task_keys(spec: &TaskSpec) -> &'static [&'static str] {
    match spec {
        TaskSpec::Quadratic { .. } => &["dim", "reps", "a", "b"],
        TaskSpec::Influence { .. } => &["n", "p", "eval_horizon"],
        TaskSpec::Toy2d { .. } => &["horizon"],
        TaskSpec::Sequence { .. } => &["seq_len", "vocab", "hidden", "init_scale"],
        TaskSpec::MlpLr { .. } => &[
            "hidden",
            "horizon",
            "n_train",
            "batch_size",
            "fixed_batch",
            "decay_steps",
            "momentum",
        ],
    }
}

fn parse_task(sec: &mut Section<'_>) -> Result<TaskConfig> {
    let id = sec.req_str("id")?;
    let mut spec = TaskSpec::default_for(id).map_err(|e| sec.bad("id", e.to_string()))?;
    let mut allowed = vec!["id", "telescope", "theta0", "data_seed"];
    allowed.extend(task_keys(&spec));
    sec.allow(&allowed)?;
    match &mut spec {
        TaskSpec::Quadratic { dim, reps, a, b } => {
            *reps = sec.opt_usize("reps")?.unwrap_or(*reps);
            *a = sec.opt_matrix("a")?;
            *b = sec.opt_f64_list("b")?;
            *dim = match (sec.opt_usize("dim")?, &b) {
                (Some(d), _) => d,
                (None, Some(b)) => b.len(),
                (None, None) => *dim,
            };
        }
        TaskSpec::Influence { n, p, eval_horizon } => {
            *n = sec.opt_usize("n")?.unwrap_or(*n);
            *p = sec.opt_usize("p")?.unwrap_or(*p);
            *eval_horizon = sec.opt_usize("eval_horizon")?.unwrap_or(*eval_horizon);
        }
        TaskSpec::Toy2d { horizon } => {
            *horizon = sec.opt_usize("horizon")?.unwrap_or(*horizon);
        }
        TaskSpec::Sequence {
            seq_len,
            vocab,
            hidden,
            init_scale,
            ..
        } => {
            *seq_len = sec.opt_usize("seq_len")?.unwrap_or(*seq_len);
            *vocab = sec.opt_usize("vocab")?.unwrap_or(*vocab);
            *hidden = sec.opt_usize("hidden")?.unwrap_or(*hidden);
            *init_scale = sec.opt_f64("init_scale")?.unwrap_or(*init_scale);
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
            if let Some(h) = sec.opt_usize_list("hidden")? {
                *hidden = h;
            }
            *horizon = sec.opt_usize("horizon")?.unwrap_or(*horizon);
            *n_train = sec.opt_usize("n_train")?.unwrap_or(*n_train);
            *batch_size = sec.opt_usize("batch_size")?.unwrap_or(*batch_size);
            *fixed_batch = sec.opt_usize("fixed_batch")?.unwrap_or(*fixed_batch);
            *decay_steps = sec.opt_f64("decay_steps")?.unwrap_or(*decay_steps);
            *momentum = sec.opt_f64("momentum")?.unwrap_or(*momentum);
        }
    }
    Ok(TaskConfig {
        spec,
        telescope: sec.opt_bool("telescope")?.unwrap_or(false),
        theta0: sec.opt_f64_list("theta0")?,
        data_seed: sec.opt_u64("data_seed")?,
    })
}

fn parse_estimator(sec: &mut Section<'_>) -> Result<EstimatorConfig> {
    sec.allow(&["kind", "n_pairs", "sigma", "K", "M", "alpha", "beta"])?;
    let kind: EstimatorKind = match sec.opt_str("kind")? {
        Some(k) => k.parse().map_err(|e: Error| sec.bad("kind", e.to_string()))?,
        None => return Err(sec.bad("kind", "missing required key")),
    };
    let n_pairs = sec.opt_usize("n_pairs")?.unwrap_or(1);
    let sigma = sec.req_f64("sigma")?;
    let k = sec.req_usize("K")?;
    let mut cfg = EstimatorConfig::new(kind, n_pairs, sigma, k);
    if kind == EstimatorKind::EsGen {
        if let Some(m) = sec.opt_usize("M")? {
            cfg = cfg.with_resample_interval(m);
        }
    } else if sec.has("M") {
        return Err(sec.bad("M", format!("only used by es-gen, not {}", kind.as_str())));
    }
    if kind == EstimatorKind::EsMix {
        let alpha = sec.opt_f64("alpha")?.unwrap_or(cfg.mix_alpha);
        let beta = sec.opt_f64("beta")?.unwrap_or(cfg.mix_beta);
        cfg = cfg.with_mix(alpha, beta);
    } else {
        for key in ["alpha", "beta"] {
            if sec.has(key) {
                return Err(sec.bad(key, format!("only used by es-mix, not {}", kind.as_str())));
            }
        }
    }
    cfg.validate().map_err(|e| sec.bad("", e.to_string()))?;
    Ok(cfg)
}

fn parse_optimizer(sec: &mut Section<'_>, task: &TaskSpec) -> Result<OptimizerConfig> {
    sec.allow(&["kind", "lr", "beta1", "beta2", "eps"])?;
    let default = task.default_optimizer();
    let kind = match sec.opt_str("kind")? {
        Some(k) => k.parse().map_err(|e: Error| sec.bad("kind", e.to_string()))?,
        None => default.kind,
    };
    let base = match kind {
        OptimizerKind::Sgd => OptimizerConfig::sgd(default.lr),
        OptimizerKind::Adam => OptimizerConfig::adam(default.lr),
    };
    let lr = sec.opt_f64("lr")?.unwrap_or(base.lr);
    let cfg = if kind == OptimizerKind::Adam {
        OptimizerConfig {
            lr,
            beta1: sec.opt_f64("beta1")?.unwrap_or(base.beta1),
            beta2: sec.opt_f64("beta2")?.unwrap_or(base.beta2),
            eps: sec.opt_f64("eps")?.unwrap_or(base.eps),
            ..base
        }
    } else {
        for key in ["beta1", "beta2", "eps"] {
            if sec.has(key) {
                return Err(sec.bad(key, "only used by adam"));
            }
        }
        OptimizerConfig { lr, ..base }
    };
    cfg.validate().map_err(|e| sec.bad("", e.to_string()))?;
    Ok(cfg)
}

/// A table being consumed key by key; `finish` rejects whatever was not read.
struct Section<'a> {
    prefix: String,
    table: &'a Table,
    seen: BTreeSet<&'a str>,
}

impl<'a> Section<'a> {
    fn new(prefix: &str, table: &'a Table) -> Self {
        Section {
            prefix: prefix.to_string(),
            table,
            seen: BTreeSet::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        match (self.prefix.is_empty(), key.is_empty()) {
            (true, _) => key.to_string(),
            (false, true) => self.prefix.clone(),
            (false, false) => format!("{}.{key}", self.prefix),
        }
    }

    fn bad(&self, key: &str, message: impl Into<String>) -> Error {
        Error::config(self.path(key), message)
    }

    fn has(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    fn take(&mut self, key: &str) -> Option<&'a Value> {
        let (k, v) = self.table.get_key_value(key)?;
        self.seen.insert(k.as_str());
        Some(v)
    }

    /// Rejects keys outside `allowed` before anything else is read, so a
    /// misspelling is reported as itself and not as a missing key.
    fn allow(&self, allowed: &[&str]) -> Result<()> {
        match self.table.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.bad(k, "unknown key for this section")),
            None => Ok(()),
        }
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().find(|k| !self.seen.contains(k.as_str())) {
            Some(k) => Err(self.bad(k, "unknown key for this section")),
            None => Ok(()),
        }
    }

    fn opt_sub(&mut self, key: &str) -> Result<Option<Section<'a>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section::new(&self.path(key), t))),
            Some(_) => Err(self.bad(key, "expected a table")),
        }
    }

    fn req_sub(&mut self, key: &str) -> Result<Section<'a>> {
        self.opt_sub(key)?.ok_or_else(|| self.bad(key, "missing required table"))
    }

    fn opt_str(&mut self, key: &str) -> Result<Option<&'a str>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(self.bad(key, "expected a string")),
        }
    }

    fn req_str(&mut self, key: &str) -> Result<&'a str> {
        self.opt_str(key)?.ok_or_else(|| self.bad(key, "missing required key"))
    }

    fn opt_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.bad(key, "expected a boolean")),
        }
    }

    fn as_f64(&self, key: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(x) if x.is_finite() => Ok(*x),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(self.bad(key, "expected a finite number")),
        }
    }

    fn as_usize(&self, key: &str, v: &Value) -> Result<usize> {
        match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(self.bad(key, "expected a non-negative integer")),
        }
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.take(key).map(|v| self.as_f64(key, v)).transpose()
    }

    fn req_f64(&mut self, key: &str) -> Result<f64> {
        self.opt_f64(key)?.ok_or_else(|| self.bad(key, "missing required key"))
    }

    fn opt_usize(&mut self, key: &str) -> Result<Option<usize>> {
        self.take(key).map(|v| self.as_usize(key, v)).transpose()
    }

    fn req_usize(&mut self, key: &str) -> Result<usize> {
        self.opt_usize(key)?.ok_or_else(|| self.bad(key, "missing required key"))
    }

    /// Non-negative integer, or a decimal string for values beyond `i64`.
    fn opt_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(Value::String(s)) => s.parse().map(Some).map_err(|_| self.bad(key, "expected a u64")),
            Some(_) => Err(self.bad(key, "expected a non-negative integer")),
        }
    }

    fn req_u64(&mut self, key: &str) -> Result<u64> {
        self.opt_u64(key)?.ok_or_else(|| self.bad(key, "missing required key"))
    }

    fn array(&mut self, key: &str) -> Result<Option<&'a Vec<Value>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a)),
            Some(_) => Err(self.bad(key, "expected an array")),
        }
    }

    fn opt_f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        self.array(key)?
            .map(|a| a.iter().map(|v| self.as_f64(key, v)).collect())
            .transpose()
    }

    fn opt_usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        self.array(key)?
            .map(|a| a.iter().map(|v| self.as_usize(key, v)).collect())
            .transpose()
    }

    fn opt_matrix(&mut self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(rows) = self.array(key)? else {
            return Ok(None);
        };
        rows.iter()
            .map(|r| match r {
                Value::Array(r) => r.iter().map(|v| self.as_f64(key, v)).collect(),
                _ => Err(self.bad(key, "expected an array of arrays")),
            })
            .collect::<Result<_>>()
            .map(Some)
    }
}
