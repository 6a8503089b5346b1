//! Experiment orchestration: config parsing, solver runs from a shared
//! initialization point, CSV traces, and equal-budget summaries.
//!
//! Config files are flat `key = value` text with dotted section names; see
//! the README for the exact grammar. Outputs per experiment: one
//! `trace_<solver>.csv` per solver, a `summary.csv` aligned at the largest
//! common sample budget, and a `metadata.txt` sidecar that doubles as a
//! re-runnable config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array1;

use crate::baseline::{run_baseline, BaselineConfig, PowerSchedule, TwoTimescaleConfig};
use crate::data::{self, streams, CsvSchema, Dataset, RngSpec};
use crate::error::{Error, Result};
use crate::estimator::{BatchPlan, BatchSpec};
use crate::portfolio::PortfolioProblem;
use crate::problem::{CompositionProblem, Point};
use crate::prox::RegularizerKind;
use crate::solver::{
    self, Algorithm, LambdaRule, MomentumKind, MomentumSchedule, RestartPolicy, SolverConfig,
    TheoremPlanOptions,
};
use crate::spam::SpamProblem;
use crate::trace::{IterationRecord, MetricSettings};

// ---------------------------------------------------------------------------
// key-value config text
// ---------------------------------------------------------------------------

/// Parsed `key = value` lines, keys kept in sorted order for canonical dumps.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", i + 1)));
            }
            if !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(Error::config(format!(
                    "line {}: key {key:?} has characters outside [a-z0-9_.]",
                    i + 1
                )));
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        Ok(KeyValues { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.map.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("missing required key {key}")))
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::config(format!("key {key}: cannot parse {value:?}")))
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| self.parse_as(key, v)).transpose()
    }

    fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key).map(|v| self.parse_as(key, v)).transpose()
    }

    fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key).map(|v| self.parse_as(key, v)).transpose()
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_usize(key)?.unwrap_or(default))
    }

    /// Keys with the given prefix stripped.
    fn section(&self, prefix: &str) -> KeyValues {
        let mut map = BTreeMap::new();
        let full = format!("{prefix}.");
        for (k, v) in &self.map {
            if let Some(rest) = k.strip_prefix(&full) {
                map.insert(rest.to_string(), v.clone());
            }
        }
        KeyValues { map }
    }

    /// Distinct `solver.<index>` indices, sorted numerically.
    fn solver_indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .map
            .keys()
            .filter_map(|k| {
                k.strip_prefix("solver.")
                    .and_then(|rest| rest.split('.').next())
                    .and_then(|idx| idx.parse().ok())
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn known_or_meta(&self, known: &[String]) -> Result<()> {
        for key in self.map.keys() {
            if key.starts_with("meta.") {
                continue;
            }
            if !known.iter().any(|k| k == key) {
                return Err(Error::config(format!("unknown key {key}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// experiment model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum ProblemSpec {
    Portfolio {
        data: DataSource,
        n: usize,
        d: usize,
        risk_weight: f64,
        l1_weight: f64,
        return_mean: f64,
        return_scale: f64,
        seed: u64,
    },
    Spam {
        data: DataSource,
        n: usize,
        d_signal: usize,
        d_noise: usize,
        noise_sd: f64,
        group_weight: f64,
        l1_weight: f64,
        seed: u64,
    },
    LeastSquares {
        d: usize,
        components: usize,
        sigma_min: f64,
        sigma_max: f64,
        perturbation: f64,
        seed: u64,
    },
    IdentityQuadratic {
        d: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone)]
pub struct SolverEntry {
    pub name: String,
    pub kind: SolverKind,
}

#[derive(Debug, Clone)]
pub enum SolverKind {
    Momentum(SolverConfig),
    Civr(SolverConfig),
    Scgd(TwoTimescaleConfig),
    Ascpg(TwoTimescaleConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitPoint {
    Zeros,
    Gaussian { scale: f64 },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverEntry>,
    pub metric: MetricSettings,
    pub init: InitPoint,
}

const KNOWN_EXPERIMENT_KEYS: &[&str] = &[
    "experiment.seed",
    "experiment.output_dir",
    "experiment.x0",
    "experiment.x0_scale",
    "metric.lambda",
    "metric.cadence",
];

const KNOWN_PROBLEM_KEYS: &[&str] = &[
    "problem.kind",
    "problem.data",
    "problem.n",
    "problem.d",
    "problem.risk_weight",
    "problem.l1_weight",
    "problem.return_mean",
    "problem.return_scale",
    "problem.seed",
    "problem.d_signal",
    "problem.d_noise",
    "problem.noise_sd",
    "problem.group_weight",
    "problem.components",
    "problem.sigma_min",
    "problem.sigma_max",
    "problem.perturbation",
];

const KNOWN_SOLVER_KEYS: &[&str] = &[
    "name",
    "algorithm",
    "iterations",
    "tau",
    "momentum",
    "alpha",
    "beta",
    "lambda",
    "epsilon",
    "restart",
    "seed",
    "checkpoint_a",
    "batch_a",
    "checkpoint_ap",
    "batch_ap",
    "checkpoint_b",
    "batch_b",
    "theorem_schedule",
    "step_coeff",
    "step_exponent",
    "weight_coeff",
    "weight_exponent",
    "batch",
    "outer_batch",
];

impl ExperimentConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut known: Vec<String> = KNOWN_EXPERIMENT_KEYS
            .iter()
            .chain(KNOWN_PROBLEM_KEYS)
            .map(|s| s.to_string())
            .collect();
        for idx in kv.solver_indices() {
            for k in KNOWN_SOLVER_KEYS {
                known.push(format!("solver.{idx}.{k}"));
            }
        }
        kv.known_or_meta(&known)?;

        let seed = kv.get_u64("experiment.seed")?.unwrap_or(0);
        // the one supported environment override
        let output_dir = PathBuf::from(
            std::env::var("MVRC_OUTPUT_DIR")
                .ok()
                .or_else(|| kv.get("experiment.output_dir").map(str::to_string))
                .ok_or_else(|| Error::config("missing required key experiment.output_dir"))?,
        );

        let init = match kv.get("experiment.x0").unwrap_or("gaussian") {
            "zeros" => InitPoint::Zeros,
            "gaussian" => InitPoint::Gaussian {
                scale: kv.f64_or("experiment.x0_scale", 1.0)?,
            },
            other => {
                return Err(Error::config(format!(
                    "experiment.x0 must be zeros|gaussian, got {other}"
                )))
            }
        };

        let metric = MetricSettings {
            lambda: kv.get_f64("metric.lambda")?,
            every: match kv.get("metric.cadence") {
                None | Some("auto") => None,
                Some(v) => Some(kv.parse_as::<usize>("metric.cadence", v)?),
            },
        };
        if let Some(l) = metric.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::config(format!("metric.lambda must be > 0, got {l}")));
            }
        }

        let problem = Self::problem_from_kv(kv)?;

        let indices = kv.solver_indices();
        if indices.is_empty() {
            return Err(Error::config("no solver.<index>.* entries configured"));
        }
        let mut solvers = Vec::new();
        for idx in indices {
            let section = kv.section(&format!("solver.{idx}"));
            let default_seed = seed.wrapping_add(idx as u64);
            solvers.push(Self::solver_from_kv(idx, &section, &metric, default_seed)?);
        }
        let mut names: Vec<&str> = solvers.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != solvers.len() {
            return Err(Error::config("solver names must be distinct"));
        }

        Ok(ExperimentConfig {
            seed,
            output_dir,
            problem,
            solvers,
            metric,
            init,
        })
    }

    fn problem_from_kv(kv: &KeyValues) -> Result<ProblemSpec> {
        let kind = kv.require("problem.kind")?;
        let data = match kv.get("problem.data").unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic,
            path => DataSource::Csv(PathBuf::from(path)),
        };
        match kind {
            "portfolio" => Ok(ProblemSpec::Portfolio {
                data,
                n: kv.usize_or("problem.n", 2048)?,
                d: kv.usize_or("problem.d", 30)?,
                risk_weight: kv.f64_or("problem.risk_weight", 0.2)?,
                l1_weight: kv.f64_or("problem.l1_weight", 0.01)?,
                return_mean: kv.f64_or("problem.return_mean", 0.05)?,
                return_scale: kv.f64_or("problem.return_scale", 0.3)?,
                seed: kv.get_u64("problem.seed")?.unwrap_or(1),
            }),
            "spam" => Ok(ProblemSpec::Spam {
                data,
                n: kv.usize_or("problem.n", 5000)?,
                d_signal: kv.usize_or("problem.d_signal", 4)?,
                d_noise: kv.usize_or("problem.d_noise", 96)?,
                noise_sd: kv.f64_or("problem.noise_sd", 1.0)?,
                group_weight: kv.f64_or("problem.group_weight", 1.0)?,
                l1_weight: kv.f64_or("problem.l1_weight", 0.001)?,
                seed: kv.get_u64("problem.seed")?.unwrap_or(1),
            }),
            "least_squares" => Ok(ProblemSpec::LeastSquares {
                d: kv.usize_or("problem.d", 10)?,
                components: kv.usize_or("problem.components", 64)?,
                sigma_min: kv.f64_or("problem.sigma_min", 1.0)?,
                sigma_max: kv.f64_or("problem.sigma_max", 2.0)?,
                perturbation: kv.f64_or("problem.perturbation", 0.05)?,
                seed: kv.get_u64("problem.seed")?.unwrap_or(1),
            }),
            "identity_quadratic" => Ok(ProblemSpec::IdentityQuadratic {
                d: kv.usize_or("problem.d", 2)?,
            }),
            other => Err(Error::config(format!("unknown problem.kind {other}"))),
        }
    }

    fn solver_from_kv(
        idx: usize,
        kv: &KeyValues,
        metric: &MetricSettings,
        default_seed: u64,
    ) -> Result<SolverEntry> {
        let name = kv
            .get("name")
            .map(str::to_string)
            .unwrap_or_else(|| format!("solver{idx}"));
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::config(format!(
                "solver name {name:?} must be nonempty [A-Za-z0-9_-]"
            )));
        }
        let algorithm = kv.require("algorithm")?;
        let seed = kv.get_u64("seed")?.unwrap_or(default_seed);

        let kind = match algorithm {
            "mvrc1" | "mvrc2" | "civr" => {
                let algo = if algorithm == "mvrc2" {
                    Algorithm::Mvrc2
                } else {
                    Algorithm::Mvrc1
                };
                let iterations = kv
                    .get_usize("iterations")?
                    .ok_or_else(|| Error::config(format!("solver {name}: missing iterations")))?;
                let beta = kv
                    .get_f64("beta")?
                    .ok_or_else(|| Error::config(format!("solver {name}: missing beta")))?;
                let momentum = match kv.get("momentum").unwrap_or("constant") {
                    "diminishing" => MomentumKind::Diminishing,
                    "constant" => MomentumKind::Constant {
                        alpha: kv.f64_or("alpha", 0.8)?,
                    },
                    other => {
                        return Err(Error::config(format!(
                            "solver {name}: momentum must be diminishing|constant, got {other}"
                        )))
                    }
                };
                let lambda_rule = match kv.get("lambda").unwrap_or("one_plus_alpha") {
                    "one_plus_alpha" => LambdaRule::OnePlusAlphaBeta,
                    "beta" => LambdaRule::Beta,
                    v => LambdaRule::Fixed(kv.parse_as::<f64>("lambda", v)?),
                };
                let tau = kv
                    .get_usize("tau")?
                    .ok_or_else(|| Error::config(format!("solver {name}: missing tau")))?;
                let plan = Self::plan_from_kv(&name, kv, algo)?;
                let restart = match kv.get("restart").unwrap_or("none") {
                    "none" => RestartPolicy::NoRestart,
                    v => {
                        let (which, runs) = v.split_once(':').ok_or_else(|| {
                            Error::config(format!(
                                "solver {name}: restart must be none or kind:runs, got {v}"
                            ))
                        })?;
                        let runs: usize = runs.parse().map_err(|_| {
                            Error::config(format!("solver {name}: bad restart count in {v}"))
                        })?;
                        match which {
                            "chain" => RestartPolicy::PeriodicChain { runs },
                            "epoch" => RestartPolicy::PeriodicEpoch { runs },
                            "graddom" => RestartPolicy::GradDomRandom { runs },
                            other => {
                                return Err(Error::config(format!(
                                    "solver {name}: unknown restart kind {other}"
                                )))
                            }
                        }
                    }
                };
                let schedule = MomentumSchedule {
                    kind: momentum,
                    beta,
                    lambda_rule,
                };
                let config = SolverConfig {
                    algorithm: algo,
                    schedule,
                    iterations,
                    tau,
                    batch_plan: plan,
                    epsilon: kv.f64_or("epsilon", 0.0)?,
                    restart,
                    seed,
                    metric: *metric,
                    record_sequences: false,
                };
                if algorithm == "civr" {
                    SolverKind::Civr(config)
                } else {
                    SolverKind::Momentum(config)
                }
            }
            "scgd" | "ascpg" => {
                let iterations = kv
                    .get_usize("iterations")?
                    .ok_or_else(|| Error::config(format!("solver {name}: missing iterations")))?;
                let batch = kv.usize_or("batch", 1)?;
                let (d_step, d_sexp, d_wcoeff, d_wexp) = if algorithm == "ascpg" {
                    (1e-4, -5.0 / 9.0, 1.0, -4.0 / 9.0)
                } else {
                    (1e-3, -0.5, 1.0, -4.0 / 9.0)
                };
                let cfg = TwoTimescaleConfig {
                    iterations,
                    step: PowerSchedule::new(
                        kv.f64_or("step_coeff", d_step)?,
                        kv.f64_or("step_exponent", d_sexp)?,
                    ),
                    weight: PowerSchedule::new(
                        kv.f64_or("weight_coeff", d_wcoeff)?,
                        kv.f64_or("weight_exponent", d_wexp)?,
                    ),
                    batch,
                    outer_batch: kv.usize_or("outer_batch", 1)?,
                    seed,
                    metric: *metric,
                };
                if algorithm == "scgd" {
                    SolverKind::Scgd(cfg)
                } else {
                    SolverKind::Ascpg(cfg)
                }
            }
            other => {
                return Err(Error::config(format!(
                    "solver {name}: unknown algorithm {other}"
                )))
            }
        };
        Ok(SolverEntry { name, kind })
    }

    fn plan_from_kv(name: &str, kv: &KeyValues, algo: Algorithm) -> Result<BatchPlan> {
        let spec = |key_ck: &str, key_in: &str| -> Result<(BatchSpec, BatchSpec)> {
            let ck = match kv.get(key_ck).unwrap_or("full") {
                "full" => BatchSpec::Full,
                v => BatchSpec::Count(kv.parse_as::<usize>(key_ck, v)?),
            };
            let inner = BatchSpec::Count(kv.usize_or(key_in, 1)?);
            Ok((ck, inner))
        };
        let (ck_a, in_a) = spec("checkpoint_a", "batch_a")?;
        match algo {
            Algorithm::Mvrc1 => Ok(BatchPlan::single(ck_a, in_a)),
            Algorithm::Mvrc2 => {
                let (ck_ap, in_ap) = if kv.get("checkpoint_ap").is_some() || kv.get("batch_ap").is_some() {
                    spec("checkpoint_ap", "batch_ap")?
                } else {
                    (ck_a, in_a)
                };
                let (ck_b, in_b) = spec("checkpoint_b", "batch_b")?;
                let _ = name;
                Ok(BatchPlan::double(ck_a, in_a, ck_ap, in_ap, ck_b, in_b))
            }
        }
    }

    /// Canonical key-value dump; parsing it back yields an equivalent config.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("experiment.seed", self.seed);
        kv.set("experiment.output_dir", self.output_dir.display());
        match self.init {
            InitPoint::Zeros => kv.set("experiment.x0", "zeros"),
            InitPoint::Gaussian { scale } => {
                kv.set("experiment.x0", "gaussian");
                kv.set("experiment.x0_scale", scale);
            }
        }
        if let Some(l) = self.metric.lambda {
            kv.set("metric.lambda", l);
        }
        match self.metric.every {
            Some(e) => kv.set("metric.cadence", e),
            None => kv.set("metric.cadence", "auto"),
        }
        match &self.problem {
            ProblemSpec::Portfolio {
                data,
                n,
                d,
                risk_weight,
                l1_weight,
                return_mean,
                return_scale,
                seed,
            } => {
                kv.set("problem.kind", "portfolio");
                kv.set(
                    "problem.data",
                    match data {
                        DataSource::Synthetic => "synthetic".to_string(),
                        DataSource::Csv(p) => p.display().to_string(),
                    },
                );
                kv.set("problem.n", n);
                kv.set("problem.d", d);
                kv.set("problem.risk_weight", risk_weight);
                kv.set("problem.l1_weight", l1_weight);
                kv.set("problem.return_mean", return_mean);
                kv.set("problem.return_scale", return_scale);
                kv.set("problem.seed", seed);
            }
            ProblemSpec::Spam {
                data,
                n,
                d_signal,
                d_noise,
                noise_sd,
                group_weight,
                l1_weight,
                seed,
            } => {
                kv.set("problem.kind", "spam");
                kv.set(
                    "problem.data",
                    match data {
                        DataSource::Synthetic => "synthetic".to_string(),
                        DataSource::Csv(p) => p.display().to_string(),
                    },
                );
                kv.set("problem.n", n);
                kv.set("problem.d_signal", d_signal);
                kv.set("problem.d_noise", d_noise);
                kv.set("problem.noise_sd", noise_sd);
                kv.set("problem.group_weight", group_weight);
                kv.set("problem.l1_weight", l1_weight);
                kv.set("problem.seed", seed);
            }
            ProblemSpec::LeastSquares {
                d,
                components,
                sigma_min,
                sigma_max,
                perturbation,
                seed,
            } => {
                kv.set("problem.kind", "least_squares");
                kv.set("problem.d", d);
                kv.set("problem.components", components);
                kv.set("problem.sigma_min", sigma_min);
                kv.set("problem.sigma_max", sigma_max);
                kv.set("problem.perturbation", perturbation);
                kv.set("problem.seed", seed);
            }
            ProblemSpec::IdentityQuadratic { d } => {
                kv.set("problem.kind", "identity_quadratic");
                kv.set("problem.d", d);
            }
        }
        for (i, entry) in self.solvers.iter().enumerate() {
            let p = format!("solver.{}", i + 1);
            kv.set(format!("{p}.name"), &entry.name);
            match &entry.kind {
                SolverKind::Momentum(c) | SolverKind::Civr(c) => {
                    let algo = match (&entry.kind, c.algorithm) {
                        (SolverKind::Civr(_), _) => "civr",
                        (_, Algorithm::Mvrc1) => "mvrc1",
                        (_, Algorithm::Mvrc2) => "mvrc2",
                    };
                    kv.set(format!("{p}.algorithm"), algo);
                    kv.set(format!("{p}.iterations"), c.iterations);
                    kv.set(format!("{p}.tau"), c.tau);
                    kv.set(format!("{p}.beta"), c.schedule.beta);
                    match c.schedule.kind {
                        MomentumKind::Diminishing => kv.set(format!("{p}.momentum"), "diminishing"),
                        MomentumKind::Constant { alpha } => {
                            kv.set(format!("{p}.momentum"), "constant");
                            kv.set(format!("{p}.alpha"), alpha);
                        }
                    }
                    match c.schedule.lambda_rule {
                        LambdaRule::Beta => kv.set(format!("{p}.lambda"), "beta"),
                        LambdaRule::OnePlusAlphaBeta => {
                            kv.set(format!("{p}.lambda"), "one_plus_alpha")
                        }
                        LambdaRule::Fixed(v) => kv.set(format!("{p}.lambda"), v),
                    }
                    if c.epsilon > 0.0 {
                        kv.set(format!("{p}.epsilon"), c.epsilon);
                    }
                    match c.restart {
                        RestartPolicy::NoRestart => kv.set(format!("{p}.restart"), "none"),
                        RestartPolicy::PeriodicChain { runs } => {
                            kv.set(format!("{p}.restart"), format!("chain:{runs}"))
                        }
                        RestartPolicy::PeriodicEpoch { runs } => {
                            kv.set(format!("{p}.restart"), format!("epoch:{runs}"))
                        }
                        RestartPolicy::GradDomRandom { runs } => {
                            kv.set(format!("{p}.restart"), format!("graddom:{runs}"))
                        }
                    }
                    kv.set(format!("{p}.seed"), c.seed);
                    let set_spec = |kv: &mut KeyValues, key: String, spec: BatchSpec| match spec {
                        BatchSpec::Full => kv.set(key, "full"),
                        BatchSpec::Count(m) => kv.set(key, m),
                    };
                    set_spec(&mut kv, format!("{p}.checkpoint_a"), c.batch_plan.checkpoint_a);
                    if let BatchSpec::Count(m) = c.batch_plan.inner_a {
                        kv.set(format!("{p}.batch_a"), m);
                    }
                    if c.algorithm == Algorithm::Mvrc2 {
                        set_spec(&mut kv, format!("{p}.checkpoint_ap"), c.batch_plan.checkpoint_ap);
                        if let BatchSpec::Count(m) = c.batch_plan.inner_ap {
                            kv.set(format!("{p}.batch_ap"), m);
                        }
                        set_spec(&mut kv, format!("{p}.checkpoint_b"), c.batch_plan.checkpoint_b);
                        if let BatchSpec::Count(m) = c.batch_plan.inner_b {
                            kv.set(format!("{p}.batch_b"), m);
                        }
                    }
                }
                SolverKind::Scgd(c) | SolverKind::Ascpg(c) => {
                    kv.set(
                        format!("{p}.algorithm"),
                        if matches!(entry.kind, SolverKind::Scgd(_)) {
                            "scgd"
                        } else {
                            "ascpg"
                        },
                    );
                    kv.set(format!("{p}.iterations"), c.iterations);
                    kv.set(format!("{p}.step_coeff"), c.step.coeff);
                    kv.set(format!("{p}.step_exponent"), c.step.exponent);
                    kv.set(format!("{p}.weight_coeff"), c.weight.coeff);
                    kv.set(format!("{p}.weight_exponent"), c.weight.exponent);
                    kv.set(format!("{p}.batch"), c.batch);
                    kv.set(format!("{p}.outer_batch"), c.outer_batch);
                    kv.set(format!("{p}.seed"), c.seed);
                }
            }
        }
        kv
    }

    /// Builds the problem instance and reports the dataset checksum when a
    /// dataset is involved.
    pub fn build_problem(&self) -> Result<(Box<dyn CompositionProblem>, Option<String>)> {
        match &self.problem {
            ProblemSpec::Portfolio {
                data,
                n,
                d,
                risk_weight,
                l1_weight,
                return_mean,
                return_scale,
                seed,
            } => {
                let dataset = match data {
                    DataSource::Synthetic => data::synth_portfolio(
                        *n,
                        *d,
                        *return_mean,
                        *return_scale,
                        RngSpec::new(*seed, streams::DATA_SYNTH),
                    ),
                    DataSource::Csv(path) => load_portfolio_csv(path, *d)?,
                };
                let checksum = dataset.checksum.clone();
                let problem = PortfolioProblem::new(
                    dataset.matrix,
                    *risk_weight,
                    RegularizerKind::l1(*l1_weight),
                    10.0,
                )?;
                Ok((Box::new(problem), Some(checksum)))
            }
            ProblemSpec::Spam {
                data,
                n,
                d_signal,
                d_noise,
                noise_sd,
                group_weight,
                l1_weight,
                seed,
            } => {
                let dataset = match data {
                    DataSource::Synthetic => data::synth_housing(
                        *n,
                        *d_signal,
                        *d_noise,
                        *noise_sd,
                        RngSpec::new(*seed, streams::DATA_SYNTH),
                    ),
                    DataSource::Csv(path) => {
                        let schema = CsvSchema {
                            target_last_column: true,
                            expect_features: None,
                        };
                        data::load_csv(path, &schema)?
                    }
                };
                let checksum = dataset.checksum.clone();
                let targets = dataset
                    .targets
                    .clone()
                    .ok_or_else(|| Error::config("spam problem needs a target column"))?;
                let problem = SpamProblem::new(
                    dataset.matrix,
                    targets,
                    *group_weight,
                    RegularizerKind::l1(*l1_weight),
                    10.0,
                )?;
                Ok((Box::new(problem), Some(checksum)))
            }
            ProblemSpec::LeastSquares {
                d,
                components,
                sigma_min,
                sigma_max,
                perturbation,
                seed,
            } => {
                if !(sigma_min > &0.0 && sigma_max >= sigma_min) {
                    return Err(Error::config("need 0 < sigma_min <= sigma_max"));
                }
                let sigmas: Vec<f64> = (0..*d)
                    .map(|i| {
                        if *d == 1 {
                            *sigma_min
                        } else {
                            let t = i as f64 / (*d as f64 - 1.0);
                            sigma_min * (sigma_max / sigma_min).powf(t)
                        }
                    })
                    .collect();
                let mut rng = RngSpec::new(*seed, streams::DATA_SYNTH).rng();
                let x_star = data::gaussian_point(*d, 1.0, &mut rng);
                let problem = crate::synthetic::SyntheticProblem::least_squares_with_spectrum(
                    *d,
                    *components,
                    &sigmas,
                    *perturbation,
                    x_star,
                    *seed,
                );
                Ok((Box::new(problem), None))
            }
            ProblemSpec::IdentityQuadratic { d } => {
                let problem =
                    crate::synthetic::SyntheticProblem::identity_quadratic(Array1::zeros(*d));
                Ok((Box::new(problem), None))
            }
        }
    }

    pub fn initial_point(&self, dim: usize) -> Point {
        match self.init {
            InitPoint::Zeros => Array1::zeros(dim),
            InitPoint::Gaussian { scale } => {
                let mut rng = RngSpec::new(self.seed, streams::INIT_POINT).rng();
                data::gaussian_point(dim, scale, &mut rng)
            }
        }
    }

    /// Fail-fast validation: builds the problem, checks every solver config
    /// against it, resolves the initialization point.
    pub fn validate(&self) -> Result<()> {
        let (problem, _) = self.build_problem()?;
        let x0 = self.initial_point(problem.dim());
        crate::problem::validate_point(problem.as_ref(), &x0)?;
        for entry in &self.solvers {
            match &entry.kind {
                SolverKind::Momentum(c) | SolverKind::Civr(c) => c.validate(problem.as_ref())?,
                SolverKind::Scgd(_) | SolverKind::Ascpg(_) => {}
            }
        }
        Ok(())
    }
}

fn load_portfolio_csv(path: &Path, d: usize) -> Result<Dataset> {
    let schema = CsvSchema {
        target_last_column: false,
        expect_features: Some(d),
    };
    data::load_csv(path, &schema)
}

// ---------------------------------------------------------------------------
// running experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SolverRunSummary {
    pub name: String,
    pub status: String,
    /// Cumulative samples at the aligned budget row.
    pub samples_at_budget: u64,
    pub final_grad_mapping: f64,
    pub best_grad_mapping: f64,
    pub final_objective: f64,
    pub best_objective: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub rows: Vec<SolverRunSummary>,
    pub common_budget: u64,
    pub output_dir: PathBuf,
}

/// Runs every configured solver from the shared initialization point and
/// writes `trace_<name>.csv`, `summary.csv`, and `metadata.txt`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let (problem, checksum) = config.build_problem()?;
    let x0 = config.initial_point(problem.dim());
    std::fs::create_dir_all(&config.output_dir)?;

    let mut traces: Vec<(String, Vec<IterationRecord>, Option<String>)> = Vec::new();
    for entry in &config.solvers {
        let result = match &entry.kind {
            SolverKind::Momentum(c) => solver::run(problem.as_ref(), &x0, c),
            SolverKind::Civr(c) => crate::baseline::run_civr(problem.as_ref(), &x0, c),
            SolverKind::Scgd(c) => {
                run_baseline(problem.as_ref(), &x0, &BaselineConfig::Scgd(c.clone()))
            }
            SolverKind::Ascpg(c) => {
                run_baseline(problem.as_ref(), &x0, &BaselineConfig::Ascpg(c.clone()))
            }
        };
        match result {
            Ok(out) => traces.push((entry.name.clone(), out.trace, out.failure)),
            Err(e) if e.is_config() => return Err(e),
            Err(e) => traces.push((entry.name.clone(), Vec::new(), Some(e.to_string()))),
        }
    }

    for (name, trace, failure) in &traces {
        let path = config.output_dir.join(format!("trace_{name}.csv"));
        write_trace_csv(&path, trace, failure.as_deref())?;
    }

    let summary = summarize_traces(&traces, &config.output_dir);
    write_summary_csv(&config.output_dir.join("summary.csv"), &summary)?;
    write_metadata(config, checksum.as_deref(), &x0)?;
    Ok(summary)
}

pub fn write_trace_csv(
    path: &Path,
    trace: &[IterationRecord],
    failure: Option<&str>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(IterationRecord::CSV_HEADER);
    out.push('\n');
    for rec in trace {
        out.push_str(&rec.to_csv_row());
        out.push('\n');
    }
    if let Some(msg) = failure {
        let _ = writeln!(out, "# error: {msg}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<(Vec<IterationRecord>, Option<String>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty trace", path.display())))?;
    if header != IterationRecord::CSV_HEADER {
        return Err(Error::data(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let mut records = Vec::new();
    let mut failure = None;
    for line in lines {
        if let Some(msg) = line.strip_prefix("# error: ") {
            failure = Some(msg.to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(Error::data(format!(
                "{}: bad trace row {line:?}",
                path.display()
            )));
        }
        let parse_u = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::data(format!("{}: bad integer {s:?}", path.display())))
        };
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::data(format!("{}: bad float {s:?}", path.display())))
        };
        records.push(IterationRecord {
            iter: parse_u(cells[0])?,
            samples_g: parse_u(cells[1])?,
            samples_gp: parse_u(cells[2])?,
            samples_fgrad: parse_u(cells[3])?,
            prox_evals: parse_u(cells[4])?,
            grad_mapping_norm: parse_f(cells[5])?,
            objective: parse_f(cells[6])?,
            wall_ms: parse_f(cells[7])?,
        });
    }
    Ok((records, failure))
}

/// Aligns solvers at the largest sample budget they all reached and reports
/// final/best metrics up to that budget. Solvers consume different sample
/// counts per iteration, so comparisons are never made at raw iteration
/// indices.
fn summarize_traces(
    traces: &[(String, Vec<IterationRecord>, Option<String>)],
    output_dir: &Path,
) -> ExperimentSummary {
    let common_budget = traces
        .iter()
        .filter_map(|(_, t, _)| t.last().map(|r| r.total_samples()))
        .min()
        .unwrap_or(0);

    let mut rows = Vec::new();
    for (name, trace, failure) in traces {
        let in_budget: Vec<&IterationRecord> = trace
            .iter()
            .filter(|r| r.total_samples() <= common_budget)
            .collect();
        let status = match failure {
            Some(msg) => format!("error: {msg}"),
            None => "ok".to_string(),
        };
        if in_budget.is_empty() {
            rows.push(SolverRunSummary {
                name: name.clone(),
                status,
                samples_at_budget: 0,
                final_grad_mapping: f64::NAN,
                best_grad_mapping: f64::NAN,
                final_objective: f64::NAN,
                best_objective: f64::NAN,
            });
            continue;
        }
        let last = in_budget.last().unwrap();
        let best_gm = in_budget
            .iter()
            .map(|r| r.grad_mapping_norm)
            .fold(f64::INFINITY, f64::min);
        let best_obj = in_budget
            .iter()
            .map(|r| r.objective)
            .fold(f64::INFINITY, f64::min);
        rows.push(SolverRunSummary {
            name: name.clone(),
            status,
            samples_at_budget: last.total_samples(),
            final_grad_mapping: last.grad_mapping_norm,
            best_grad_mapping: best_gm,
            final_objective: last.objective,
            best_objective: best_obj,
        });
    }
    ExperimentSummary {
        rows,
        common_budget,
        output_dir: output_dir.to_path_buf(),
    }
}

fn write_summary_csv(path: &Path, summary: &ExperimentSummary) -> Result<()> {
    let mut out = String::from(
        "solver,status,common_budget,samples_at_budget,final_grad_mapping,best_grad_mapping,final_objective,best_objective\n",
    );
    for row in &summary.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.name,
            row.status,
            summary.common_budget,
            row.samples_at_budget,
            row.final_grad_mapping,
            row.best_grad_mapping,
            row.final_objective,
            row.best_objective
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_metadata(config: &ExperimentConfig, checksum: Option<&str>, x0: &Point) -> Result<()> {
    let mut kv = config.to_kv();
    if let Some(sum) = checksum {
        kv.set("meta.dataset_checksum", sum);
    }
    kv.set("meta.crate_version", env!("CARGO_PKG_VERSION"));
    kv.set(
        "meta.x0",
        x0.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    );
    let mut text = String::from("# experiment metadata: re-runnable config plus meta.* facts\n");
    text.push_str(&kv.dump());
    std::fs::write(config.output_dir.join("metadata.txt"), text)?;
    Ok(())
}

/// Reference for function-value gaps: the best objective seen in this
/// experiment, or the best of a designated reference trace.
#[derive(Debug, Clone)]
pub enum GapReference {
    BestObserved,
    ReferenceRun(PathBuf),
}

/// `gap_t = objective_t - Φ_ref`. With `BestObserved`, the minimizing row's
/// gap is exactly zero by construction.
pub fn function_value_gap(
    trace: &[IterationRecord],
    reference: &GapReference,
    all_traces: &[Vec<IterationRecord>],
) -> Result<Vec<f64>> {
    let reference_value = match reference {
        GapReference::BestObserved => all_traces
            .iter()
            .flat_map(|t| t.iter().map(|r| r.objective))
            .fold(f64::INFINITY, f64::min),
        GapReference::ReferenceRun(path) => {
            let (records, _) = read_trace_csv(path)?;
            if records.is_empty() {
                return Err(Error::data(format!(
                    "reference run {} has no rows",
                    path.display()
                )));
            }
            records
                .iter()
                .map(|r| r.objective)
                .fold(f64::INFINITY, f64::min)
        }
    };
    if !reference_value.is_finite() {
        return Err(Error::data("no finite reference objective available"));
    }
    Ok(trace.iter().map(|r| r.objective - reference_value).collect())
}

/// Recomputes `summary.csv` from the trace files in a directory.
pub fn summarize_directory(dir: &Path) -> Result<ExperimentSummary> {
    let mut traces = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("trace_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::data(format!(
            "{}: no trace_*.csv files found",
            dir.display()
        )));
    }
    for path in entries {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(|n| n.trim_start_matches("trace_").trim_end_matches(".csv").to_string())
            .unwrap_or_default();
        let (records, failure) = read_trace_csv(&path)?;
        traces.push((name, records, failure));
    }
    let summary = summarize_traces(&traces, dir);
    write_summary_csv(&dir.join("summary.csv"), &summary)?;
    Ok(summary)
}

/// Theorem-driven helper used by presets: picks `tau`, batches, and `beta`
/// from the problem metadata.
pub fn theorem_schedule_config(
    problem: &dyn CompositionProblem,
    algorithm: Algorithm,
    kind: MomentumKind,
    iterations: usize,
    epsilon: f64,
) -> Result<SolverConfig> {
    let (tau, plan) = solver::theorem_batch_plan(
        problem,
        algorithm,
        epsilon,
        &TheoremPlanOptions::default(),
    )?;
    let schedule = MomentumSchedule {
        kind,
        beta: match algorithm {
            Algorithm::Mvrc1 => solver::theorem_beta(
                problem.lipschitz(),
                &MomentumSchedule {
                    kind,
                    beta: 1.0,
                    lambda_rule: LambdaRule::OnePlusAlphaBeta,
                },
            ),
            Algorithm::Mvrc2 => solver::theorem_beta_mvrc2(problem, 2.0, 2.0)?,
        },
        lambda_rule: LambdaRule::OnePlusAlphaBeta,
    };
    let iterations = iterations.max(tau);
    Ok(SolverConfig::new(algorithm, schedule, iterations, tau, plan).with_epsilon(epsilon))
}
