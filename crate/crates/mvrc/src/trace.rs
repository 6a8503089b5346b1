//! Per-iteration metric records shared by all solvers.

use crate::estimator::SampleCost;

/// Cumulative oracle-consumption counters. Sample counters count individual
/// component evaluations (a two-point correction costs two evaluations per
/// sample); metric evaluations are out-of-band and not included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub samples_g: u64,
    pub samples_gp: u64,
    pub samples_fgrad: u64,
    pub prox_evals: u64,
}

impl Counters {
    pub fn add_cost(&mut self, cost: SampleCost) {
        self.samples_g += cost.g;
        self.samples_gp += cost.gp;
        self.samples_fgrad += cost.fgrad;
    }

    /// Total component evaluations of every kind.
    pub fn total_samples(&self) -> u64 {
        self.samples_g + self.samples_gp + self.samples_fgrad
    }
}

/// One emitted metric row.
///
/// `grad_mapping_norm` and `objective` are measured at the solver's output
/// candidate for iteration `iter` (the extrapolated query point for the
/// momentum solvers, the main iterate for the baselines); the counters are
/// cumulative after the iteration's sampling work.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: u64,
    pub samples_g: u64,
    pub samples_gp: u64,
    pub samples_fgrad: u64,
    pub prox_evals: u64,
    pub grad_mapping_norm: f64,
    pub objective: f64,
    pub wall_ms: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str =
        "iter,samples_g,samples_gp,samples_fgrad,prox_evals,grad_mapping_norm,objective,wall_ms";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter,
            self.samples_g,
            self.samples_gp,
            self.samples_fgrad,
            self.prox_evals,
            self.grad_mapping_norm,
            self.objective,
            self.wall_ms
        )
    }

    pub fn total_samples(&self) -> u64 {
        self.samples_g + self.samples_gp + self.samples_fgrad
    }

    /// Equality ignoring the wall-clock column, for determinism checks.
    pub fn same_modulo_wall(&self, other: &IterationRecord) -> bool {
        self.iter == other.iter
            && self.samples_g == other.samples_g
            && self.samples_gp == other.samples_gp
            && self.samples_fgrad == other.samples_fgrad
            && self.prox_evals == other.prox_evals
            && self.grad_mapping_norm == other.grad_mapping_norm
            && self.objective == other.objective
    }
}

/// When and with which prox step the gradient-mapping metric is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSettings {
    /// Emit a record every `every` iterations (the final iteration is always
    /// emitted). `None` picks the default cadence for the horizon.
    pub every: Option<usize>,
    /// Prox step for the metric; `None` uses the solver's current step.
    pub lambda: Option<f64>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            every: None,
            lambda: None,
        }
    }
}

impl MetricSettings {
    /// Default cadence: every iteration up to 10^4 iterations, then thinned
    /// to keep roughly 10^4 rows.
    pub fn cadence(&self, horizon: usize) -> usize {
        match self.every {
            Some(e) => e.max(1),
            None => horizon.div_ceil(10_000).max(1),
        }
    }
}
