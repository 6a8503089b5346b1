//! Problem abstraction and exact full-batch oracles.
//!
//! A composition problem is `Φ(x) = f(g(x)) + r(x)` where the inner mapping
//! `g: R^d -> R^p` and/or the outer function `f: R^p -> R` are averages of
//! components. Components are addressed by a [`SampleId`]: for finite sums the
//! id is the component index, for online problems it is a draw key from which
//! the component's randomness is derived deterministically. This keeps every
//! oracle a pure function of `(problem, id, x)`, so one sample can be
//! re-evaluated at two points — which the variance-reduced estimators rely on.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prox::RegularizerKind;

/// Decision vector `x` of length `d`.
pub type Point = Array1<f64>;
/// Inner-mapping value `y = g(x)` of length `p`.
pub type InnerValue = Array1<f64>;
/// Dense `p x d` Jacobian of the inner mapping.
pub type Jacobian = Array2<f64>;

/// Addresses one component: an index in `0..n` for finite sums, an arbitrary
/// draw key for online problems.
pub type SampleId = u64;

/// Component structure of one level of the composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// Average of a known component list of the given size.
    FiniteSum(usize),
    /// Only fresh sampling is possible; the exact average is not enumerable.
    Online,
}

impl Structure {
    pub fn is_online(&self) -> bool {
        matches!(self, Structure::Online)
    }

    pub fn count(&self) -> Option<usize> {
        match self {
            Structure::FiniteSum(n) => Some(*n),
            Structure::Online => None,
        }
    }
}

/// Smoothness and variance constants of a problem.
///
/// `l_f`/`l_g` bound the Lipschitz constants of `f`/`g_xi`, `cap_l_f`/`cap_l_g`
/// those of their derivatives. The sigma fields bound the per-sample variance
/// for online problems (zero is fine for finite sums). `v_graddom`, when
/// known, is a gradient-dominance parameter of the unregularized objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzProfile {
    pub l_f: f64,
    pub cap_l_f: f64,
    pub l_g: f64,
    pub cap_l_g: f64,
    pub sigma_g: f64,
    pub sigma_gp: f64,
    pub sigma_fp: f64,
    pub v_graddom: Option<f64>,
}

impl LipschitzProfile {
    pub fn new(l_f: f64, cap_l_f: f64, l_g: f64, cap_l_g: f64) -> Self {
        LipschitzProfile {
            l_f,
            cap_l_f,
            l_g,
            cap_l_g,
            sigma_g: 0.0,
            sigma_gp: 0.0,
            sigma_fp: 0.0,
            v_graddom: None,
        }
    }

    pub fn with_sigmas(mut self, sigma_g: f64, sigma_gp: f64, sigma_fp: f64) -> Self {
        self.sigma_g = sigma_g;
        self.sigma_gp = sigma_gp;
        self.sigma_fp = sigma_fp;
        self
    }

    pub fn with_graddom(mut self, v: f64) -> Self {
        self.v_graddom = Some(v);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l_f", self.l_f),
            ("L_f", self.cap_l_f),
            ("l_g", self.l_g),
            ("L_g", self.cap_l_g),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "Lipschitz constant {name} must be finite and > 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("sigma_g", self.sigma_g),
            ("sigma_gp", self.sigma_gp),
            ("sigma_fp", self.sigma_fp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "variance bound {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if let Some(v) = self.v_graddom {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "gradient dominance parameter must be finite and > 0, got {v}"
                )));
            }
        }
        let lf = self.smoothness();
        if !(lf > 0.0 && lf.is_finite()) {
            return Err(Error::config(format!(
                "derived smoothness constant must be finite and > 0, got {lf}"
            )));
        }
        Ok(())
    }

    /// Smoothness constant of the composition, `L_F = l_g^2 L_f + l_f L_g`.
    pub fn smoothness(&self) -> f64 {
        self.l_g * self.l_g * self.cap_l_f + self.l_f * self.cap_l_g
    }

    /// Estimator variance constant `G_0 = 2 (l_g^4 L_f^2 + l_f^2 L_g^2)`.
    pub fn variance_gain(&self) -> f64 {
        2.0 * (self.l_g.powi(4) * self.cap_l_f.powi(2) + self.l_f.powi(2) * self.cap_l_g.powi(2))
    }

    /// Checkpoint variance constant: zero for finite sums,
    /// `2 (l_g^2 L_f^2 sigma_g^2 + l_f^2 sigma_g'^2)` for online problems.
    pub fn checkpoint_variance(&self, online: bool) -> f64 {
        if online {
            2.0 * (self.l_g.powi(2) * self.cap_l_f.powi(2) * self.sigma_g.powi(2)
                + self.l_f.powi(2) * self.sigma_gp.powi(2))
        } else {
            0.0
        }
    }
}

/// How full oracles are evaluated on online problems: a fixed-seed sample of
/// `count` components stands in for the exact expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurrogateOracle {
    pub count: usize,
    pub seed: u64,
}

impl SurrogateOracle {
    pub fn ids(&self) -> Vec<SampleId> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count).map(|_| rng.gen::<u64>()).collect()
    }
}

/// Sampled access to the components of `Φ(x) = f(g(x)) + r(x)`.
///
/// Implementations must be immutable after construction; every method is a
/// pure function of its arguments so problems can be shared across threads.
pub trait CompositionProblem: Send + Sync {
    /// Decision dimension `d`.
    fn dim(&self) -> usize;
    /// Inner codomain dimension `p`.
    fn inner_dim(&self) -> usize;
    /// Structure of the inner average `g`.
    fn inner_structure(&self) -> Structure;
    /// Structure of the outer average `f`. `FiniteSum(1)` means a single
    /// deterministic outer function.
    fn outer_structure(&self) -> Structure;

    /// `g_xi(x)`, length `p`.
    fn inner_value(&self, id: SampleId, x: &Point) -> InnerValue;
    /// `g'_xi(x)`, shape `p x d`.
    fn inner_jacobian(&self, id: SampleId, x: &Point) -> Jacobian;
    /// `f_eta(y)` for `y` in the inner codomain.
    fn outer_value(&self, id: SampleId, y: &InnerValue) -> f64;
    /// `∇f_eta(y)`, length `p`.
    fn outer_gradient(&self, id: SampleId, y: &InnerValue) -> InnerValue;

    fn lipschitz(&self) -> &LipschitzProfile;
    fn regularizer(&self) -> &RegularizerKind;

    /// Surrogate sample spec for full oracles on online problems; `None` for
    /// finite sums (which enumerate components exactly).
    fn online_surrogate(&self) -> Option<SurrogateOracle> {
        None
    }
}

/// Checks a query point against the problem dimension and finiteness
/// invariants. All full oracles and solvers call this on entry.
pub fn validate_point(problem: &dyn CompositionProblem, x: &Point) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            context: "decision vector",
            expected: problem.dim(),
            got: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("decision vector".into()));
    }
    Ok(())
}

/// Ids enumerating the inner components for full-batch evaluation: the exact
/// list `0..n` for finite sums, the fixed-seed surrogate sample for online
/// problems.
fn full_inner_ids(problem: &dyn CompositionProblem) -> Result<Vec<SampleId>> {
    match problem.inner_structure() {
        Structure::FiniteSum(n) => Ok((0..n as u64).collect()),
        Structure::Online => {
            let surrogate = problem.online_surrogate().ok_or_else(|| {
                Error::config(
                    "online problem has no surrogate sample spec; \
                     full oracles need a configured sample count",
                )
            })?;
            Ok(surrogate.ids())
        }
    }
}

fn full_outer_ids(problem: &dyn CompositionProblem) -> Result<Vec<SampleId>> {
    match problem.outer_structure() {
        Structure::FiniteSum(n) => Ok((0..n as u64).collect()),
        Structure::Online => {
            let surrogate = problem.online_surrogate().ok_or_else(|| {
                Error::config(
                    "online problem has no surrogate sample spec; \
                     full oracles need a configured sample count",
                )
            })?;
            Ok(surrogate.ids())
        }
    }
}

/// Full inner oracle: `(g(x), g'(x))` as the uniform average over components.
///
/// Finite sums are averaged in ascending index order so the result is
/// bit-reproducible; online problems use the fixed-seed surrogate sample.
pub fn full_inner(problem: &dyn CompositionProblem, x: &Point) -> Result<(InnerValue, Jacobian)> {
    validate_point(problem, x)?;
    let ids = full_inner_ids(problem)?;
    if ids.is_empty() {
        return Err(Error::config("problem has no inner components"));
    }
    let mut g = Array1::zeros(problem.inner_dim());
    let mut gp = Array2::zeros((problem.inner_dim(), problem.dim()));
    for &id in &ids {
        g += &problem.inner_value(id, x);
        gp += &problem.inner_jacobian(id, x);
    }
    let scale = 1.0 / ids.len() as f64;
    g *= scale;
    gp *= scale;
    Ok((g, gp))
}

/// Average outer gradient `∇f(y)` over all outer components.
pub fn full_outer_gradient(problem: &dyn CompositionProblem, y: &InnerValue) -> Result<InnerValue> {
    let ids = full_outer_ids(problem)?;
    if ids.is_empty() {
        return Err(Error::config("problem has no outer components"));
    }
    let mut grad = Array1::zeros(problem.inner_dim());
    for &id in &ids {
        grad += &problem.outer_gradient(id, y);
    }
    grad *= 1.0 / ids.len() as f64;
    Ok(grad)
}

/// Exact gradient of the unregularized objective,
/// `∇F(x) = g'(x)^T ∇f(g(x))` with the outer gradient averaged when needed.
///
/// This is the oracle behind the gradient-mapping metric and the
/// finite-difference test suites.
pub fn full_gradient(problem: &dyn CompositionProblem, x: &Point) -> Result<Point> {
    let (g, gp) = full_inner(problem, x)?;
    let fgrad = full_outer_gradient(problem, &g)?;
    Ok(gp.t().dot(&fgrad))
}

/// Smooth part `F(x) = f(g(x))` of the objective (outer average when the
/// outer level is itself a sum).
pub fn composition_value(problem: &dyn CompositionProblem, x: &Point) -> Result<f64> {
    let (g, _) = full_inner(problem, x)?;
    let ids = full_outer_ids(problem)?;
    let mut total = 0.0;
    for &id in &ids {
        total += problem.outer_value(id, &g);
    }
    Ok(total / ids.len() as f64)
}

/// Full objective `Φ(x) = F(x) + r(x)`.
pub fn objective_value(problem: &dyn CompositionProblem, x: &Point) -> Result<f64> {
    Ok(composition_value(problem, x)? + problem.regularizer().value(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticProblem;
    use ndarray::array;

    /// Two-component linear problem: g_1 = I x, g_2 = 2 I x.
    struct TwoLinear;

    impl CompositionProblem for TwoLinear {
        fn dim(&self) -> usize {
            2
        }
        fn inner_dim(&self) -> usize {
            2
        }
        fn inner_structure(&self) -> Structure {
            Structure::FiniteSum(2)
        }
        fn outer_structure(&self) -> Structure {
            Structure::FiniteSum(1)
        }
        fn inner_value(&self, id: SampleId, x: &Point) -> InnerValue {
            let scale = (id + 1) as f64;
            x * scale
        }
        fn inner_jacobian(&self, id: SampleId, _x: &Point) -> Jacobian {
            let scale = (id + 1) as f64;
            Array2::eye(2) * scale
        }
        fn outer_value(&self, _id: SampleId, y: &InnerValue) -> f64 {
            0.5 * y.dot(y)
        }
        fn outer_gradient(&self, _id: SampleId, y: &InnerValue) -> InnerValue {
            y.clone()
        }
        fn lipschitz(&self) -> &LipschitzProfile {
            static PROFILE: std::sync::OnceLock<LipschitzProfile> = std::sync::OnceLock::new();
            PROFILE.get_or_init(|| LipschitzProfile::new(10.0, 1.0, 2.0, 1e-9))
        }
        fn regularizer(&self) -> &RegularizerKind {
            &RegularizerKind::None
        }
    }

    #[test]
    fn linear_average_matches_hand_value() {
        let p = TwoLinear;
        let x = array![1.0, 1.0];
        let (g, gp) = full_inner(&p, &x).unwrap();
        assert_eq!(g, array![1.5, 1.5]);
        assert_eq!(gp, Array2::eye(2) * 1.5);
    }

    #[test]
    fn finite_sum_average_is_exact_mean_in_index_order() {
        let p = TwoLinear;
        let x = array![0.25, -3.0];
        let (g, _) = full_inner(&p, &x).unwrap();
        // bit-for-bit equal to the fixed-order mean of per-component oracles
        let mut expect = Array1::<f64>::zeros(2);
        for id in 0..2u64 {
            expect += &p.inner_value(id, &x);
        }
        expect *= 1.0 / 2.0;
        assert_eq!(g, expect);
    }

    #[test]
    fn nan_point_is_a_configuration_error() {
        let p = TwoLinear;
        let x = array![f64::NAN, 0.0];
        assert!(matches!(
            full_inner(&p, &x),
            Err(Error::NonFinite(_))
        ));
        let short = array![1.0];
        assert!(matches!(
            full_gradient(&p, &short),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identity_composition_gradient_is_identity() {
        // F(x) = 0.5 ||x||^2 realized as f(y) = 0.5 ||y||^2, g = id
        let p = SyntheticProblem::identity_quadratic(Array1::zeros(2));
        let x = array![3.0, -4.0];
        let grad = full_gradient(&p, &x).unwrap();
        assert_eq!(grad, x);
        let zero = Array1::zeros(2);
        assert_eq!(full_gradient(&p, &zero).unwrap(), zero);
    }
}
