//! Recursive variance-reduced estimators of `g`, `g'`, and `∇f`.
//!
//! Every `tau` iterations the estimates are rebuilt from a checkpoint batch;
//! in between, sampled two-point corrections track the moving query point.
//! One state type serves both solver families: [`EstimatorMode::OuterExact`]
//! tracks `(g, g')` and evaluates the single outer gradient exactly, while
//! [`EstimatorMode::OuterTracked`] additionally tracks `∇f` with its own
//! recursion and independent sample sets.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::data::{draw_indices, draw_keys};
use crate::error::{Error, Result};
use crate::problem::{
    CompositionProblem, InnerValue, Jacobian, LipschitzProfile, Point, SampleId, Structure,
};

/// Which gradient estimate [`EstimatorState::approx_gradient`] assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    /// `∇F ≈ g̃'^T ∇f(g̃)` with the exact (single-component) outer gradient.
    OuterExact,
    /// `∇F ≈ g̃'^T f̃'` with a tracked outer-gradient estimate.
    OuterTracked,
}

/// One batch-size prescription: enumerate the whole component list, or draw
/// the given number of samples uniformly with replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSpec {
    Full,
    Count(usize),
}

impl BatchSpec {
    fn validate(&self, name: &str) -> Result<()> {
        if let BatchSpec::Count(0) = self {
            return Err(Error::config(format!("batch {name} must be >= 1")));
        }
        Ok(())
    }

    /// Resolved batch size for accounting purposes.
    pub fn size(&self, structure: Structure) -> Result<usize> {
        match (self, structure) {
            (BatchSpec::Full, Structure::FiniteSum(n)) => Ok(n),
            (BatchSpec::Full, Structure::Online) => Err(Error::config(
                "full-batch enumeration is impossible on an online problem; give a count",
            )),
            (BatchSpec::Count(m), _) => Ok(*m),
        }
    }
}

/// Batch sizes for the three sample sets; `independent_ap` records whether
/// the Jacobian set is drawn independently of the value set (required when
/// the outer gradient is tracked) or shared (single-level solver).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub checkpoint_a: BatchSpec,
    pub inner_a: BatchSpec,
    pub checkpoint_ap: BatchSpec,
    pub inner_ap: BatchSpec,
    pub checkpoint_b: BatchSpec,
    pub inner_b: BatchSpec,
    pub independent_ap: bool,
}

impl BatchPlan {
    /// Shared sample set for `g` and `g'`, no outer tracking.
    pub fn single(checkpoint: BatchSpec, inner: BatchSpec) -> Self {
        BatchPlan {
            checkpoint_a: checkpoint,
            inner_a: inner,
            checkpoint_ap: checkpoint,
            inner_ap: inner,
            checkpoint_b: BatchSpec::Count(1),
            inner_b: BatchSpec::Count(1),
            independent_ap: false,
        }
    }

    /// Independent sample sets for `g`, `g'`, and `∇f`.
    pub fn double(
        checkpoint_a: BatchSpec,
        inner_a: BatchSpec,
        checkpoint_ap: BatchSpec,
        inner_ap: BatchSpec,
        checkpoint_b: BatchSpec,
        inner_b: BatchSpec,
    ) -> Self {
        BatchPlan {
            checkpoint_a,
            inner_a,
            checkpoint_ap,
            inner_ap,
            checkpoint_b,
            inner_b,
            independent_ap: true,
        }
    }

    pub fn validate(&self, mode: EstimatorMode) -> Result<()> {
        for (spec, name) in [
            (self.checkpoint_a, "checkpoint_a"),
            (self.inner_a, "inner_a"),
            (self.checkpoint_ap, "checkpoint_ap"),
            (self.inner_ap, "inner_ap"),
            (self.checkpoint_b, "checkpoint_b"),
            (self.inner_b, "inner_b"),
        ] {
            spec.validate(name)?;
        }
        match mode {
            EstimatorMode::OuterExact if self.independent_ap => Err(Error::config(
                "single-level estimator shares one sample set; independent_ap must be false",
            )),
            EstimatorMode::OuterTracked if !self.independent_ap => Err(Error::config(
                "double-level estimator draws value and Jacobian sets independently; \
                 independent_ap must be true",
            )),
            _ => Ok(()),
        }
    }
}

/// Oracle evaluations consumed by one estimator call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleCost {
    pub g: u64,
    pub gp: u64,
    pub fgrad: u64,
}

impl SampleCost {
    pub fn add(&mut self, other: SampleCost) {
        self.g += other.g;
        self.gp += other.gp;
        self.fgrad += other.fgrad;
    }
}

/// Running SPIDER estimates with checkpoint bookkeeping.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    mode: EstimatorMode,
    plan: BatchPlan,
    tau: usize,
    t: usize,
    initialized: bool,
    g_tilde: InnerValue,
    gp_tilde: Jacobian,
    fp_tilde: Option<InnerValue>,
    prev_z: Option<Point>,
}

fn draw(structure: Structure, spec: BatchSpec, rng: &mut ChaCha8Rng) -> Result<Vec<SampleId>> {
    match (spec, structure) {
        (BatchSpec::Full, Structure::FiniteSum(n)) => Ok((0..n as u64).collect()),
        (BatchSpec::Full, Structure::Online) => Err(Error::config(
            "full-batch enumeration is impossible on an online problem; give a count",
        )),
        (BatchSpec::Count(m), Structure::FiniteSum(n)) => Ok(draw_indices(n, m, rng)),
        (BatchSpec::Count(m), Structure::Online) => Ok(draw_keys(m, rng)),
    }
}

impl EstimatorState {
    pub fn new(mode: EstimatorMode, plan: BatchPlan, tau: usize, p: usize, d: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::config("checkpoint period tau must be >= 1"));
        }
        plan.validate(mode)?;
        Ok(EstimatorState {
            mode,
            plan,
            tau,
            t: 0,
            initialized: false,
            g_tilde: Array1::zeros(p),
            gp_tilde: Array2::zeros((p, d)),
            fp_tilde: None,
            prev_z: None,
        })
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn g_tilde(&self) -> &InnerValue {
        &self.g_tilde
    }

    pub fn gp_tilde(&self) -> &Jacobian {
        &self.gp_tilde
    }

    pub fn fp_tilde(&self) -> Option<&InnerValue> {
        self.fp_tilde.as_ref()
    }

    /// Dispatches to the checkpoint or recursive update according to the
    /// iteration counter.
    pub fn update(
        &mut self,
        problem: &dyn CompositionProblem,
        z: &Point,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampleCost> {
        if self.t % self.tau == 0 {
            self.refresh_checkpoint(problem, z, rng)
        } else {
            self.recursive_update(problem, z, rng)
        }
    }

    /// Rebuilds every estimate from scratch at `z` using checkpoint batches.
    pub fn refresh_checkpoint(
        &mut self,
        problem: &dyn CompositionProblem,
        z: &Point,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampleCost> {
        if self.t % self.tau != 0 {
            return Err(Error::Sequencing(format!(
                "refresh_checkpoint called at t = {} with tau = {}",
                self.t, self.tau
            )));
        }
        crate::problem::validate_point(problem, z)?;
        let mut cost = SampleCost::default();
        let inner = problem.inner_structure();

        let ids_a = draw(inner, self.plan.checkpoint_a, rng)?;
        let mut g = Array1::zeros(problem.inner_dim());
        for &id in &ids_a {
            g += &problem.inner_value(id, z);
        }
        g *= 1.0 / ids_a.len() as f64;
        cost.g += ids_a.len() as u64;

        let ids_ap: Vec<SampleId> = if self.plan.independent_ap {
            draw(inner, self.plan.checkpoint_ap, rng)?
        } else {
            ids_a.clone()
        };
        let mut gp = Array2::zeros((problem.inner_dim(), problem.dim()));
        for &id in &ids_ap {
            gp += &problem.inner_jacobian(id, z);
        }
        gp *= 1.0 / ids_ap.len() as f64;
        cost.gp += ids_ap.len() as u64;

        self.g_tilde = g;
        self.gp_tilde = gp;

        if self.mode == EstimatorMode::OuterTracked {
            // the outer gradient snapshot is taken at the estimate g̃, not at
            // the exact g(z)
            let ids_b = draw(problem.outer_structure(), self.plan.checkpoint_b, rng)?;
            let mut fp = Array1::zeros(problem.inner_dim());
            for &id in &ids_b {
                fp += &problem.outer_gradient(id, &self.g_tilde);
            }
            fp *= 1.0 / ids_b.len() as f64;
            cost.fgrad += ids_b.len() as u64;
            self.fp_tilde = Some(fp);
        }

        self.prev_z = Some(z.clone());
        self.initialized = true;
        self.t += 1;
        Ok(cost)
    }

    /// Applies one two-point correction step at `z`.
    pub fn recursive_update(
        &mut self,
        problem: &dyn CompositionProblem,
        z: &Point,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampleCost> {
        if self.t % self.tau == 0 {
            return Err(Error::Sequencing(format!(
                "recursive_update called at checkpoint iteration t = {}",
                self.t
            )));
        }
        let prev_z = self
            .prev_z
            .clone()
            .ok_or_else(|| Error::Sequencing("recursive_update before any checkpoint".into()))?;
        crate::problem::validate_point(problem, z)?;
        let mut cost = SampleCost::default();
        let inner = problem.inner_structure();

        let ids_a = draw(inner, self.plan.inner_a, rng)?;
        let mut dg = Array1::zeros(problem.inner_dim());
        for &id in &ids_a {
            dg += &(problem.inner_value(id, z) - problem.inner_value(id, &prev_z));
        }
        dg *= 1.0 / ids_a.len() as f64;
        cost.g += 2 * ids_a.len() as u64;

        let ids_ap: Vec<SampleId> = if self.plan.independent_ap {
            draw(inner, self.plan.inner_ap, rng)?
        } else {
            ids_a.clone()
        };
        let mut dgp = Array2::zeros((problem.inner_dim(), problem.dim()));
        for &id in &ids_ap {
            dgp += &(problem.inner_jacobian(id, z) - problem.inner_jacobian(id, &prev_z));
        }
        dgp *= 1.0 / ids_ap.len() as f64;
        cost.gp += 2 * ids_ap.len() as u64;

        let g_prev = self.g_tilde.clone();
        self.g_tilde += &dg;
        self.gp_tilde += &dgp;

        if self.mode == EstimatorMode::OuterTracked {
            let ids_b = draw(problem.outer_structure(), self.plan.inner_b, rng)?;
            let mut dfp = Array1::zeros(problem.inner_dim());
            for &id in &ids_b {
                dfp += &(problem.outer_gradient(id, &self.g_tilde)
                    - problem.outer_gradient(id, &g_prev));
            }
            dfp *= 1.0 / ids_b.len() as f64;
            cost.fgrad += 2 * ids_b.len() as u64;
            let fp = self.fp_tilde.as_mut().ok_or_else(|| {
                Error::Sequencing("outer-gradient estimate missing before recursive update".into())
            })?;
            *fp += &dfp;
        }

        self.prev_z = Some(z.clone());
        self.t += 1;
        Ok(cost)
    }

    /// Assembles the composition-gradient estimate at the last query point.
    pub fn approx_gradient(
        &self,
        problem: &dyn CompositionProblem,
    ) -> Result<(Point, SampleCost)> {
        if !self.initialized {
            return Err(Error::config(
                "estimator not initialized; run a checkpoint refresh first",
            ));
        }
        match self.mode {
            EstimatorMode::OuterExact => {
                if problem.outer_structure() != Structure::FiniteSum(1) {
                    return Err(Error::config(
                        "exact outer gradient needs a single-component outer function",
                    ));
                }
                let fgrad = problem.outer_gradient(0, &self.g_tilde);
                let cost = SampleCost {
                    g: 0,
                    gp: 0,
                    fgrad: 1,
                };
                Ok((self.gp_tilde.t().dot(&fgrad), cost))
            }
            EstimatorMode::OuterTracked => {
                let fp = self.fp_tilde.as_ref().ok_or_else(|| {
                    Error::config("outer-gradient estimate absent in tracked mode")
                })?;
                Ok((self.gp_tilde.t().dot(fp), SampleCost::default()))
            }
        }
    }
}

/// Upper bound on `E ||∇̃F(z_t) - ∇F(z_t)||^2` since the last checkpoint:
/// `sigma_0^2 / |A_checkpoint| + G_0 * sum_s ||z_s - z_{s-1}||^2 / |A_s|`,
/// where the sum runs over the recursive steps after the checkpoint.
///
/// `displacements_sq[k]` is `||z_s - z_{s-1}||^2` for the k-th recursive step
/// and `inner_batches[k]` its batch size; pass empty slices at a checkpoint.
pub fn variance_bound(
    profile: &LipschitzProfile,
    online: bool,
    checkpoint_batch: usize,
    displacements_sq: &[f64],
    inner_batches: &[usize],
) -> Result<f64> {
    if displacements_sq.len() != inner_batches.len() {
        return Err(Error::config(format!(
            "trajectory has {} displacements but {} batch sizes",
            displacements_sq.len(),
            inner_batches.len()
        )));
    }
    if checkpoint_batch == 0 || inner_batches.iter().any(|&b| b == 0) {
        return Err(Error::config("batch sizes must be >= 1"));
    }
    let mut total = profile.checkpoint_variance(online) / checkpoint_batch as f64;
    let gain = profile.variance_gain();
    for (d2, batch) in displacements_sq.iter().zip(inner_batches) {
        total += gain * d2 / *batch as f64;
    }
    Ok(total)
}
