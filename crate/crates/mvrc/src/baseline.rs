//! Reference solvers for head-to-head convergence comparisons.
//!
//! SCGD and ASC-PG are the classical two-timescale composition methods; their
//! update equations follow the cited external references (they are not
//! contributed by this crate's solvers) and share the metric schema so curves
//! are directly comparable. CIVR is realized as the single-level momentum
//! solver with `lambda_t = beta`, which provably freezes the momentum
//! sequences (`y_t = z_t = x_t`) and leaves plain proximal SPIDER over the
//! same estimator — guaranteeing a like-for-like comparison.

use ndarray::Array1;
use rand_chacha::ChaCha8Rng;

use crate::data::{draw_indices, draw_keys, streams, RngSpec};
use crate::error::{Error, Result};
use crate::estimator::SampleCost;
use crate::problem::{validate_point, CompositionProblem, Point, SampleId, Structure};
use crate::prox::{gradient_mapping, prox};
use crate::solver::{run_mvrc1, Algorithm, LambdaRule, SolverConfig, SolverOutput};
use crate::trace::{Counters, IterationRecord, MetricSettings};

/// Power-law step sequence `coeff * t^exponent` with `t` starting at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSchedule {
    pub coeff: f64,
    pub exponent: f64,
}

impl PowerSchedule {
    pub fn new(coeff: f64, exponent: f64) -> Self {
        PowerSchedule { coeff, exponent }
    }

    pub fn constant(value: f64) -> Self {
        PowerSchedule {
            coeff: value,
            exponent: 0.0,
        }
    }

    /// Value at 0-based iteration `t`, i.e. `coeff * (t + 1)^exponent`.
    pub fn at(&self, t: usize) -> f64 {
        self.coeff * ((t + 1) as f64).powf(self.exponent)
    }
}

/// Configuration shared by the two-timescale baselines: a gradient step
/// sequence, an averaging-weight sequence, and per-iteration batch sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTimescaleConfig {
    pub iterations: usize,
    pub step: PowerSchedule,
    pub weight: PowerSchedule,
    pub batch: usize,
    /// Outer-gradient samples per iteration; ignored (exact gradient) when
    /// the outer function has a single component.
    pub outer_batch: usize,
    pub seed: u64,
    pub metric: MetricSettings,
}

impl TwoTimescaleConfig {
    pub fn new(iterations: usize, step: PowerSchedule, weight: PowerSchedule, batch: usize) -> Self {
        TwoTimescaleConfig {
            iterations,
            step,
            weight,
            batch,
            outer_batch: 1,
            seed: 0,
            metric: MetricSettings::default(),
        }
    }

    /// The published experiment schedule: `step_t = coeff * t^(-5/9)`,
    /// `weight_t = wcoeff * t^(-4/9)`.
    pub fn ascpg_defaults(iterations: usize, batch: usize, coeff: f64, wcoeff: f64) -> Self {
        TwoTimescaleConfig::new(
            iterations,
            PowerSchedule::new(coeff, -5.0 / 9.0),
            PowerSchedule::new(wcoeff, -4.0 / 9.0),
            batch,
        )
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_metric(mut self, metric: MetricSettings) -> Self {
        self.metric = metric;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iteration count must be >= 1"));
        }
        if self.batch == 0 || self.outer_batch == 0 {
            return Err(Error::config("batch sizes must be >= 1"));
        }
        for (name, s) in [("step", self.step), ("weight", self.weight)] {
            if !(s.coeff >= 0.0 && s.coeff.is_finite() && s.exponent.is_finite()) {
                return Err(Error::config(format!(
                    "{name} schedule has invalid parameters ({}, {})",
                    s.coeff, s.exponent
                )));
            }
        }
        Ok(())
    }
}

fn draw_inner(problem: &dyn CompositionProblem, count: usize, rng: &mut ChaCha8Rng) -> Vec<SampleId> {
    match problem.inner_structure() {
        Structure::FiniteSum(n) => draw_indices(n, count, rng),
        Structure::Online => draw_keys(count, rng),
    }
}

fn mean_inner_value(
    problem: &dyn CompositionProblem,
    ids: &[SampleId],
    x: &Point,
) -> Array1<f64> {
    let mut g = Array1::zeros(problem.inner_dim());
    for &id in ids {
        g += &problem.inner_value(id, x);
    }
    g * (1.0 / ids.len() as f64)
}

/// Averaged (or exact, for a single-component outer function) `∇f` at `y`.
fn outer_gradient_sample(
    problem: &dyn CompositionProblem,
    y: &Array1<f64>,
    outer_batch: usize,
    rng: &mut ChaCha8Rng,
    cost: &mut SampleCost,
) -> Array1<f64> {
    match problem.outer_structure() {
        Structure::FiniteSum(1) => {
            cost.fgrad += 1;
            problem.outer_gradient(0, y)
        }
        Structure::FiniteSum(n) => {
            let ids = draw_indices(n, outer_batch, rng);
            let mut grad = Array1::zeros(problem.inner_dim());
            for &id in &ids {
                grad += &problem.outer_gradient(id, y);
            }
            cost.fgrad += ids.len() as u64;
            grad * (1.0 / ids.len() as f64)
        }
        Structure::Online => {
            let ids = draw_keys(outer_batch, rng);
            let mut grad = Array1::zeros(problem.inner_dim());
            for &id in &ids {
                grad += &problem.outer_gradient(id, y);
            }
            cost.fgrad += ids.len() as u64;
            grad * (1.0 / ids.len() as f64)
        }
    }
}

struct BaselineLoop {
    trace: Vec<IterationRecord>,
    counters: Counters,
    x: Point,
    failure: Option<String>,
}

fn baseline_output(run: BaselineLoop) -> SolverOutput {
    let sampled_index = run.trace.last().map(|r| r.iter as usize).unwrap_or(0);
    SolverOutput {
        trace: run.trace,
        sampled_output: run.x.clone(),
        final_point: run.x,
        sampled_index,
        counters: run.counters,
        z_points: Vec::new(),
        sequences: None,
        failure: run.failure,
    }
}

fn emit_record(
    problem: &dyn CompositionProblem,
    config_metric: &MetricSettings,
    fallback_lambda: f64,
    t: usize,
    x: &Point,
    counters: &Counters,
    started: &std::time::Instant,
    trace: &mut Vec<IterationRecord>,
) -> Result<()> {
    let lambda = config_metric
        .lambda
        .unwrap_or(if fallback_lambda > 0.0 { fallback_lambda } else { 1.0 });
    let (_, gm_norm) = gradient_mapping(problem, lambda, x)?;
    let objective = crate::problem::objective_value(problem, x)?;
    trace.push(IterationRecord {
        iter: t as u64,
        samples_g: counters.samples_g,
        samples_gp: counters.samples_gp,
        samples_fgrad: counters.samples_fgrad,
        prox_evals: counters.prox_evals,
        grad_mapping_norm: gm_norm,
        objective,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    });
    Ok(())
}

/// Two-timescale composition gradient descent: an exponentially averaged
/// estimate of `g` and a prox-gradient step through a sampled Jacobian.
/// Update equations follow the cited reference method.
pub fn run_scgd(
    problem: &dyn CompositionProblem,
    x0: &Point,
    config: &TwoTimescaleConfig,
) -> Result<SolverOutput> {
    config.validate()?;
    validate_point(problem, x0)?;
    let mut rng = RngSpec::new(config.seed, streams::ESTIMATOR).rng();
    let mut counters = Counters::default();
    let mut trace = Vec::new();
    let started = std::time::Instant::now();
    let cadence = config.metric.cadence(config.iterations);

    let mut x = x0.clone();
    // auxiliary estimate seeded with one sampled evaluation at x0
    let init_ids = draw_inner(problem, config.batch, &mut rng);
    let mut aux = mean_inner_value(problem, &init_ids, &x);
    counters.samples_g += init_ids.len() as u64;
    let mut failure = None;

    for t in 0..config.iterations {
        let step = config.step.at(t);
        let weight = config.weight.at(t);

        let ids = draw_inner(problem, config.batch, &mut rng);
        let g_sample = mean_inner_value(problem, &ids, &x);
        counters.samples_g += ids.len() as u64;
        let mut jac = ndarray::Array2::zeros((problem.inner_dim(), problem.dim()));
        for &id in &ids {
            jac += &problem.inner_jacobian(id, &x);
        }
        jac *= 1.0 / ids.len() as f64;
        counters.samples_gp += ids.len() as u64;

        aux = &aux * (1.0 - weight) + &g_sample * weight;
        let mut cost = SampleCost::default();
        let fgrad = outer_gradient_sample(problem, &aux, config.outer_batch, &mut rng, &mut cost);
        counters.add_cost(cost);

        if t % cadence == 0 || t + 1 == config.iterations {
            emit_record(problem, &config.metric, step, t, &x, &counters, &started, &mut trace)?;
        }

        let direction = jac.t().dot(&fgrad);
        let x_next = if step > 0.0 {
            let out = prox(problem.regularizer(), step, &(&x - &(direction * step)))?;
            counters.prox_evals += 1;
            out
        } else {
            x.clone()
        };
        if !x_next.iter().all(|v| v.is_finite()) {
            failure = Some(format!("iterate became non-finite at iteration {t}"));
            break;
        }
        x = x_next;
    }

    Ok(baseline_output(BaselineLoop {
        trace,
        counters,
        x,
        failure,
    }))
}

/// Accelerated proximal variant: the prox step queries `∇f` at the running
/// average, then the average tracks `g` at an extrapolated point
/// `z_{t+1} = (1 - 1/w_t) x_t + (1/w_t) x_{t+1}`. Update equations follow the
/// cited reference method.
pub fn run_ascpg(
    problem: &dyn CompositionProblem,
    x0: &Point,
    config: &TwoTimescaleConfig,
) -> Result<SolverOutput> {
    config.validate()?;
    validate_point(problem, x0)?;
    let mut rng = RngSpec::new(config.seed, streams::ESTIMATOR).rng();
    let mut counters = Counters::default();
    let mut trace = Vec::new();
    let started = std::time::Instant::now();
    let cadence = config.metric.cadence(config.iterations);

    let mut x = x0.clone();
    let init_ids = draw_inner(problem, config.batch, &mut rng);
    let mut aux = mean_inner_value(problem, &init_ids, &x);
    counters.samples_g += init_ids.len() as u64;
    let mut failure = None;

    for t in 0..config.iterations {
        let step = config.step.at(t);
        let weight = config.weight.at(t);

        let ids = draw_inner(problem, config.batch, &mut rng);
        let mut jac = ndarray::Array2::zeros((problem.inner_dim(), problem.dim()));
        for &id in &ids {
            jac += &problem.inner_jacobian(id, &x);
        }
        jac *= 1.0 / ids.len() as f64;
        counters.samples_gp += ids.len() as u64;

        let mut cost = SampleCost::default();
        let fgrad = outer_gradient_sample(problem, &aux, config.outer_batch, &mut rng, &mut cost);
        counters.add_cost(cost);

        if t % cadence == 0 || t + 1 == config.iterations {
            emit_record(problem, &config.metric, step, t, &x, &counters, &started, &mut trace)?;
        }

        let direction = jac.t().dot(&fgrad);
        let x_next = if step > 0.0 {
            let out = prox(problem.regularizer(), step, &(&x - &(direction * step)))?;
            counters.prox_evals += 1;
            out
        } else {
            x.clone()
        };
        if !x_next.iter().all(|v| v.is_finite()) {
            failure = Some(format!("iterate became non-finite at iteration {t}"));
            break;
        }

        // extrapolated query point for the g-average
        let inv_w = 1.0 / weight;
        let z = &x * (1.0 - inv_w) + &x_next * inv_w;
        let ids_g = draw_inner(problem, config.batch, &mut rng);
        let g_sample = mean_inner_value(problem, &ids_g, &z);
        counters.samples_g += ids_g.len() as u64;
        aux = &aux * (1.0 - weight) + &g_sample * weight;

        x = x_next;
    }

    Ok(baseline_output(BaselineLoop {
        trace,
        counters,
        x,
        failure,
    }))
}

/// CIVR as a thin wrapper: the single-level solver with `lambda_t = beta`.
/// The trace is bit-identical to the degenerate momentum run by construction.
pub fn run_civr(
    problem: &dyn CompositionProblem,
    x0: &Point,
    config: &SolverConfig,
) -> Result<SolverOutput> {
    let mut inner = config.clone();
    inner.algorithm = Algorithm::Mvrc1;
    inner.schedule.lambda_rule = LambdaRule::Beta;
    run_mvrc1(problem, x0, &inner)
}

/// Baseline selection for experiment configs.
#[derive(Debug, Clone)]
pub enum BaselineConfig {
    Scgd(TwoTimescaleConfig),
    Ascpg(TwoTimescaleConfig),
    Civr(SolverConfig),
}

pub fn run_baseline(
    problem: &dyn CompositionProblem,
    x0: &Point,
    config: &BaselineConfig,
) -> Result<SolverOutput> {
    match config {
        BaselineConfig::Scgd(c) => run_scgd(problem, x0, c),
        BaselineConfig::Ascpg(c) => run_ascpg(problem, x0, c),
        BaselineConfig::Civr(c) => run_civr(problem, x0, c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{BatchPlan, BatchSpec};
    use crate::problem::full_gradient;
    use crate::prox::RegularizerKind;
    use crate::solver::MomentumSchedule;
    use crate::synthetic::SyntheticProblem;
    use ndarray::array;

    #[test]
    fn zero_steps_keep_iterates_fixed() {
        let p = SyntheticProblem::identity_quadratic(array![1.0, -1.0]);
        let cfg = TwoTimescaleConfig::new(
            20,
            PowerSchedule::constant(0.0),
            PowerSchedule::constant(1.0),
            1,
        );
        let x0 = array![0.4, 0.6];
        let out = run_scgd(&p, &x0, &cfg).unwrap();
        assert_eq!(out.final_point, x0);
        assert!(out.failure.is_none());
    }

    #[test]
    fn scgd_with_unit_weight_is_plain_gradient_descent() {
        let p = SyntheticProblem::identity_quadratic(array![2.0, -3.0]);
        let step = 0.15;
        let cfg = TwoTimescaleConfig::new(
            25,
            PowerSchedule::constant(step),
            PowerSchedule::constant(1.0),
            1,
        );
        let x0 = array![0.0, 0.0];
        let out = run_scgd(&p, &x0, &cfg).unwrap();

        // independent plain gradient-descent recursion
        let mut x = vec![0.0, 0.0];
        let center = [2.0, -3.0];
        for _ in 0..25 {
            for j in 0..2 {
                x[j] -= step * (x[j] - center[j]);
            }
        }
        for j in 0..2 {
            assert!(
                (out.final_point[j] - x[j]).abs() < 1e-12,
                "{} vs {}",
                out.final_point[j],
                x[j]
            );
        }
    }

    #[test]
    fn ascpg_degenerate_case_matches_proximal_gradient_descent() {
        let p = SyntheticProblem::identity_quadratic(array![1.0, -2.0])
            .with_regularizer(RegularizerKind::l1(0.05));
        let step = 0.2;
        let cfg = TwoTimescaleConfig::new(
            30,
            PowerSchedule::constant(step),
            PowerSchedule::constant(1.0),
            1,
        );
        let x0 = array![0.3, 0.3];
        let out = run_ascpg(&p, &x0, &cfg).unwrap();

        // independent proximal gradient descent
        let mut x = [0.3, 0.3];
        let center = [1.0, -2.0];
        let thr = step * 0.05;
        for _ in 0..30 {
            for j in 0..2 {
                let forward = x[j] - step * (x[j] - center[j]);
                x[j] = if forward.abs() <= thr {
                    0.0
                } else {
                    forward - thr * forward.signum()
                };
            }
        }
        for j in 0..2 {
            assert!(
                (out.final_point[j] - x[j]).abs() < 1e-12,
                "{} vs {}",
                out.final_point[j],
                x[j]
            );
        }
    }

    #[test]
    fn ascpg_schedule_values_and_monotonicity() {
        let cfg = TwoTimescaleConfig::ascpg_defaults(10, 1, 1e-4, 1.0);
        assert_eq!(cfg.step.at(0), 1e-4);
        assert_eq!(cfg.weight.at(0), 1.0);
        let mut prev_a = f64::INFINITY;
        let mut prev_b = f64::INFINITY;
        for t in 0..10_000 {
            let a = cfg.step.at(t);
            let b = cfg.weight.at(t);
            assert!(a < prev_a && b < prev_b, "schedules must decrease");
            prev_a = a;
            prev_b = b;
        }
    }

    #[test]
    fn seeded_runs_reproduce() {
        let p = SyntheticProblem::least_squares_with_spectrum(
            3,
            5,
            &[1.0, 1.4, 2.0],
            0.2,
            array![1.0, 1.0, 1.0],
            3,
        );
        let cfg = TwoTimescaleConfig::new(
            15,
            PowerSchedule::new(0.05, -0.5),
            PowerSchedule::new(1.0, -0.4),
            2,
        )
        .with_seed(99);
        let x0 = array![0.0, 0.5, -0.5];
        let a = run_scgd(&p, &x0, &cfg).unwrap();
        let b = run_scgd(&p, &x0, &cfg).unwrap();
        assert_eq!(a.final_point, b.final_point);
        assert_eq!(a.trace.len(), b.trace.len());
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert!(ra.same_modulo_wall(rb));
        }
    }

    #[test]
    fn civr_momentum_sequences_are_inert() {
        let p = SyntheticProblem::identity_quadratic(array![1.0, 1.0]);
        let mut cfg = SolverConfig::new(
            Algorithm::Mvrc1,
            MomentumSchedule::diminishing(0.05),
            12,
            3,
            BatchPlan::single(BatchSpec::Full, BatchSpec::Count(1)),
        )
        .with_seed(5);
        cfg.record_sequences = true;
        let x0 = array![0.2, -0.9];
        let out = run_civr(&p, &x0, &cfg).unwrap();
        let seq = out.sequences.as_ref().unwrap();
        for t in 0..12 {
            let dyx = (&seq.y[t] - &seq.x[t]).mapv(f64::abs).sum();
            let dzx = (&seq.z[t] - &seq.x[t]).mapv(f64::abs).sum();
            assert!(dyx < 1e-13 && dzx < 1e-13, "t={t}: {dyx}, {dzx}");
        }
        assert!((out.counters.prox_evals, out.trace.len().max(1)).0 == 12);
    }

    #[test]
    fn gradient_direction_sanity() {
        // one SCGD step moves against the gradient on a smooth problem
        let p = SyntheticProblem::identity_quadratic(array![0.0, 0.0]);
        let x0 = array![1.0, 1.0];
        let g = full_gradient(&p, &x0).unwrap();
        let cfg = TwoTimescaleConfig::new(
            1,
            PowerSchedule::constant(0.1),
            PowerSchedule::constant(1.0),
            1,
        );
        let out = run_scgd(&p, &x0, &cfg).unwrap();
        let moved = &out.final_point - &x0;
        assert!(moved.dot(&g) < 0.0);
    }
}
