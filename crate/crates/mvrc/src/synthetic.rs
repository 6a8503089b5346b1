//! Synthetic verification problems with closed-form optima, known
//! gradient-dominance constants, and globally computable smoothness bounds.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::problem::{
    composition_value, full_gradient, CompositionProblem, InnerValue, Jacobian, LipschitzProfile,
    Point, SampleId, Structure, SurrogateOracle,
};
use crate::prox::RegularizerKind;

#[derive(Debug, Clone)]
enum Variant {
    /// `g_i(x) = A_i x`, `f(y) = 0.5 ||y - b||^2`, with `mean(A_i)` built from
    /// known singular values so the gradient-dominance constant is exact.
    LeastSquares {
        components: Vec<Array2<f64>>,
        target: Array1<f64>,
        sigma_min: f64,
    },
    /// `g = id`, `f(y) = 0.5 ||y - b||^2`.
    IdentityQuadratic { center: Array1<f64> },
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    variant: Variant,
    dim: usize,
    regularizer: RegularizerKind,
    profile: LipschitzProfile,
    pub known_optimum: Point,
    pub known_optimal_value: f64,
}

/// Product of random Givens rotations: exactly orthogonal up to roundoff.
fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::eye(d);
    if d < 2 {
        return q;
    }
    for _ in 0..3 * d {
        let i = rng.gen_range(0..d);
        let mut j = rng.gen_range(0..d - 1);
        if j >= i {
            j += 1;
        }
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (sin, cos) = theta.sin_cos();
        for c in 0..d {
            let qi = q[[i, c]];
            let qj = q[[j, c]];
            q[[i, c]] = cos * qi - sin * qj;
            q[[j, c]] = sin * qi + cos * qj;
        }
    }
    q
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl SyntheticProblem {
    /// `F(x) = 0.5 ||x - center||^2` through the identity inner mapping.
    pub fn identity_quadratic(center: Array1<f64>) -> Self {
        let d = center.len();
        let radius = 10.0 + 2.0 * center.dot(&center).sqrt();
        let profile = LipschitzProfile::new(radius, 1.0, 1.0, 1e-9).with_graddom(1.0);
        SyntheticProblem {
            known_optimum: center.clone(),
            known_optimal_value: 0.0,
            variant: Variant::IdentityQuadratic { center },
            dim: d,
            regularizer: RegularizerKind::None,
            profile,
        }
    }

    /// Scaled quadratic `F(x) = 0.5 ||c x||^2`, handy for gradient-dominance
    /// scaling checks (`v = 1 / c^2`).
    pub fn scaled_quadratic(d: usize, scale: f64) -> Self {
        let sigmas = vec![scale; d];
        Self::least_squares_with_spectrum(d, 1, &sigmas, 0.0, Array1::zeros(d), 77)
    }

    /// Gradient-dominant least-squares composition with `component_count`
    /// inner components averaging to a matrix with the given spectrum, and
    /// optimum at `x_star` (so the optimal value is zero).
    pub fn least_squares_with_spectrum(
        d: usize,
        component_count: usize,
        sigmas: &[f64],
        perturbation: f64,
        x_star: Array1<f64>,
        seed: u64,
    ) -> Self {
        assert_eq!(sigmas.len(), d, "need one singular value per dimension");
        assert!(component_count >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q1 = random_rotation(d, &mut rng);
        let q2 = random_rotation(d, &mut rng);
        // mean = Q1 diag(sigmas) Q2^T
        let mut mean = Array2::zeros((d, d));
        for r in 0..d {
            for c in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += q1[[r, k]] * sigmas[k] * q2[[c, k]];
                }
                mean[[r, c]] = acc;
            }
        }

        // zero-sum perturbations keep the exact average at `mean`
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut components = Vec::with_capacity(component_count);
        if component_count == 1 {
            components.push(mean.clone());
        } else {
            let mut total = Array2::<f64>::zeros((d, d));
            for _ in 0..component_count - 1 {
                let e = Array2::from_shape_fn((d, d), |_| perturbation * normal.sample(&mut rng));
                total += &e;
                components.push(&mean + &e);
            }
            components.push(&mean - &total);
        }

        let target = mean.dot(&x_star);
        let sigma_min = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
        let sigma_max = sigmas.iter().cloned().fold(0.0f64, f64::max);

        let l_g = components
            .iter()
            .map(frobenius)
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let target_norm = target.dot(&target).sqrt();
        let radius = 10.0 * (1.0 + x_star.dot(&x_star).sqrt());
        let l_f = sigma_max * radius + target_norm + 1.0;
        let profile = LipschitzProfile::new(l_f, 1.0, l_g, 1e-9)
            .with_graddom(1.0 / (sigma_min * sigma_min));

        SyntheticProblem {
            known_optimum: x_star,
            known_optimal_value: 0.0,
            variant: Variant::LeastSquares {
                components,
                target,
                sigma_min,
            },
            dim: d,
            regularizer: RegularizerKind::None,
            profile,
        }
    }

    pub fn with_regularizer(mut self, reg: RegularizerKind) -> Self {
        self.regularizer = reg;
        self
    }

    /// Gradient-dominance constant `v` such that
    /// `F(x) - F* <= (v/2) ||∇F(x)||^2`, certified by checking the inequality
    /// at 1000 seeded sample points before returning.
    pub fn graddom_constant(&self, seed: u64) -> Result<f64> {
        let v = match &self.variant {
            Variant::LeastSquares { sigma_min, .. } => 1.0 / (sigma_min * sigma_min),
            Variant::IdentityQuadratic { .. } => 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..1000 {
            let x = &self.known_optimum
                + &Array1::from_iter((0..self.dim).map(|_| 2.0 * normal.sample(&mut rng)));
            let gap = composition_value(self, &x)? - self.known_optimal_value;
            let grad = full_gradient(self, &x)?;
            let bound = 0.5 * v * grad.dot(&grad);
            if gap > bound + 1e-9 * (gap.abs() + 1.0) {
                return Err(Error::config(format!(
                    "gradient dominance certificate failed: gap {gap} > {bound}"
                )));
            }
        }
        Ok(v)
    }
}

impl CompositionProblem for SyntheticProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inner_dim(&self) -> usize {
        self.dim
    }

    fn inner_structure(&self) -> Structure {
        match &self.variant {
            Variant::LeastSquares { components, .. } => Structure::FiniteSum(components.len()),
            Variant::IdentityQuadratic { .. } => Structure::FiniteSum(1),
        }
    }

    fn outer_structure(&self) -> Structure {
        Structure::FiniteSum(1)
    }

    fn inner_value(&self, id: SampleId, x: &Point) -> InnerValue {
        match &self.variant {
            Variant::LeastSquares { components, .. } => {
                components[id as usize % components.len()].dot(x)
            }
            Variant::IdentityQuadratic { .. } => x.clone(),
        }
    }

    fn inner_jacobian(&self, id: SampleId, _x: &Point) -> Jacobian {
        match &self.variant {
            Variant::LeastSquares { components, .. } => {
                components[id as usize % components.len()].clone()
            }
            Variant::IdentityQuadratic { .. } => Array2::eye(self.dim),
        }
    }

    fn outer_value(&self, _id: SampleId, y: &InnerValue) -> f64 {
        let center = match &self.variant {
            Variant::LeastSquares { target, .. } => target,
            Variant::IdentityQuadratic { center } => center,
        };
        let diff = y - center;
        0.5 * diff.dot(&diff)
    }

    fn outer_gradient(&self, _id: SampleId, y: &InnerValue) -> InnerValue {
        let center = match &self.variant {
            Variant::LeastSquares { target, .. } => target,
            Variant::IdentityQuadratic { center } => center,
        };
        y - center
    }

    fn lipschitz(&self) -> &LipschitzProfile {
        &self.profile
    }

    fn regularizer(&self) -> &RegularizerKind {
        &self.regularizer
    }
}

/// Finite-sum verification family with bounded derivatives everywhere:
/// `g_i(x) = B_i x + a_i ⊙ sin(x)` and `f(y) = Σ log cosh(y_j)`.
///
/// Every smoothness constant in its profile is a global bound computed from
/// the instance data, which makes it suitable for checking variance
/// inequalities empirically.
#[derive(Debug, Clone)]
pub struct SineSumProblem {
    linear: Vec<Array2<f64>>,
    amplitude: Vec<Array1<f64>>,
    dim: usize,
    inner_dim: usize,
    profile: LipschitzProfile,
}

impl SineSumProblem {
    pub fn new(dim: usize, inner_dim: usize, components: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut linear = Vec::with_capacity(components);
        let mut amplitude = Vec::with_capacity(components);
        for _ in 0..components {
            linear.push(Array2::from_shape_fn((inner_dim, dim), |_| {
                scale * normal.sample(&mut rng)
            }));
            amplitude.push(Array1::from_iter(
                (0..inner_dim).map(|_| scale * normal.sample(&mut rng)),
            ));
        }

        let l_g = linear
            .iter()
            .zip(&amplitude)
            .map(|(b, a)| frobenius(b) + a.dot(a).sqrt())
            .fold(0.0f64, f64::max);
        // sine terms of several components can couple to the same coordinate;
        // the Jacobian Lipschitz bound groups amplitudes per coordinate
        let cap_l_g = amplitude
            .iter()
            .map(|a| {
                let mut per_coord = vec![0.0f64; dim];
                for (k, v) in a.iter().enumerate() {
                    per_coord[k % dim] += v * v;
                }
                per_coord.iter().cloned().fold(0.0f64, f64::max).sqrt()
            })
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let l_f = (inner_dim as f64).sqrt();
        let profile = LipschitzProfile::new(l_f, 1.0, l_g, cap_l_g);

        SineSumProblem {
            linear,
            amplitude,
            dim,
            inner_dim,
            profile,
        }
    }
}

impl CompositionProblem for SineSumProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inner_dim(&self) -> usize {
        self.inner_dim
    }

    fn inner_structure(&self) -> Structure {
        Structure::FiniteSum(self.linear.len())
    }

    fn outer_structure(&self) -> Structure {
        Structure::FiniteSum(1)
    }

    fn inner_value(&self, id: SampleId, x: &Point) -> InnerValue {
        let i = id as usize % self.linear.len();
        let mut out = self.linear[i].dot(x);
        for k in 0..self.inner_dim {
            out[k] += self.amplitude[i][k] * x[k % self.dim].sin();
        }
        out
    }

    fn inner_jacobian(&self, id: SampleId, x: &Point) -> Jacobian {
        let i = id as usize % self.linear.len();
        let mut jac = self.linear[i].clone();
        for k in 0..self.inner_dim {
            let j = k % self.dim;
            jac[[k, j]] += self.amplitude[i][k] * x[j].cos();
        }
        jac
    }

    fn outer_value(&self, _id: SampleId, y: &InnerValue) -> f64 {
        y.iter().map(|v| v.cosh().ln()).sum()
    }

    fn outer_gradient(&self, _id: SampleId, y: &InnerValue) -> InnerValue {
        y.mapv(f64::tanh)
    }

    fn lipschitz(&self) -> &LipschitzProfile {
        &self.profile
    }

    fn regularizer(&self) -> &RegularizerKind {
        &RegularizerKind::None
    }
}

/// Online synthetic problem `g_xi(x) = x + delta_xi + eps_xi ⊙ sin(x)` with
/// `E g_xi = x` exactly, `f(y) = 0.5 ||y||^2`. Per-sample noise is derived
/// deterministically from the draw key, so each component is a genuine
/// function that can be evaluated at several points.
#[derive(Debug, Clone)]
pub struct OnlineShiftProblem {
    dim: usize,
    shift_sd: f64,
    jac_amplitude: f64,
    salt: u64,
    surrogate: Option<SurrogateOracle>,
    profile: LipschitzProfile,
}

impl OnlineShiftProblem {
    pub fn new(dim: usize, shift_sd: f64, jac_amplitude: f64, salt: u64) -> Self {
        let d = dim as f64;
        let l_g = d.sqrt() * (1.0 + jac_amplitude);
        let cap_l_g = jac_amplitude.max(1e-9);
        let sigma_g = (d * shift_sd * shift_sd + d * jac_amplitude * jac_amplitude / 3.0).sqrt();
        let sigma_gp = (d * jac_amplitude * jac_amplitude / 3.0).sqrt();
        let profile = LipschitzProfile::new(20.0 * d.sqrt(), 1.0, l_g, cap_l_g).with_sigmas(
            sigma_g,
            sigma_gp,
            0.0,
        );
        OnlineShiftProblem {
            dim,
            shift_sd,
            jac_amplitude,
            salt,
            surrogate: None,
            profile,
        }
    }

    pub fn with_surrogate(mut self, count: usize, seed: u64) -> Self {
        self.surrogate = Some(SurrogateOracle { count, seed });
        self
    }

    pub fn with_lipschitz(mut self, profile: LipschitzProfile) -> Self {
        self.profile = profile;
        self
    }

    fn component_noise(&self, id: SampleId) -> (Array1<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.salt);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let shift = Array1::from_iter(
            (0..self.dim).map(|_| self.shift_sd * normal.sample(&mut rng)),
        );
        let eps = if self.jac_amplitude > 0.0 {
            Uniform::new_inclusive(-self.jac_amplitude, self.jac_amplitude).sample(&mut rng)
        } else {
            0.0
        };
        (shift, eps)
    }
}

impl CompositionProblem for OnlineShiftProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inner_dim(&self) -> usize {
        self.dim
    }

    fn inner_structure(&self) -> Structure {
        Structure::Online
    }

    fn outer_structure(&self) -> Structure {
        Structure::FiniteSum(1)
    }

    fn inner_value(&self, id: SampleId, x: &Point) -> InnerValue {
        let (shift, eps) = self.component_noise(id);
        let mut out = x + &shift;
        for j in 0..self.dim {
            out[j] += eps * x[j].sin();
        }
        out
    }

    fn inner_jacobian(&self, id: SampleId, x: &Point) -> Jacobian {
        let (_, eps) = self.component_noise(id);
        let mut jac = Array2::eye(self.dim);
        for j in 0..self.dim {
            jac[[j, j]] += eps * x[j].cos();
        }
        jac
    }

    fn outer_value(&self, _id: SampleId, y: &InnerValue) -> f64 {
        0.5 * y.dot(y)
    }

    fn outer_gradient(&self, _id: SampleId, y: &InnerValue) -> InnerValue {
        y.clone()
    }

    fn lipschitz(&self) -> &LipschitzProfile {
        &self.profile
    }

    fn regularizer(&self) -> &RegularizerKind {
        &RegularizerKind::None
    }

    fn online_surrogate(&self) -> Option<SurrogateOracle> {
        self.surrogate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_quadratic_graddom_is_one() {
        let p = SyntheticProblem::identity_quadratic(Array1::zeros(3));
        assert_eq!(p.graddom_constant(1).unwrap(), 1.0);
    }

    #[test]
    fn scaled_quadratic_graddom_is_inverse_square() {
        let p = SyntheticProblem::scaled_quadratic(3, 2.0);
        assert!((p.graddom_constant(2).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn random_least_squares_certificate_passes() {
        let sigmas = [0.8, 1.1, 1.5, 2.0, 2.4];
        let x_star = array![1.0, -2.0, 0.5, 0.0, 3.0];
        let p = SyntheticProblem::least_squares_with_spectrum(5, 4, &sigmas, 0.05, x_star, 11);
        let v = p.graddom_constant(3).unwrap();
        assert!((v - 1.0 / (0.8f64 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn least_squares_optimum_is_known() {
        let sigmas = [1.0, 2.0];
        let x_star = array![0.3, -0.7];
        let p =
            SyntheticProblem::least_squares_with_spectrum(2, 3, &sigmas, 0.1, x_star.clone(), 5);
        let val = composition_value(&p, &x_star).unwrap();
        assert!(val.abs() < 1e-24, "optimal value {val}");
        let grad = full_gradient(&p, &x_star).unwrap();
        assert!(grad.dot(&grad).sqrt() < 1e-12);
    }

    #[test]
    fn rotation_matrices_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_rotation(6, &mut rng);
        let qtq = q.t().dot(&q);
        for r in 0..6 {
            for c in 0..6 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((qtq[[r, c]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn online_shift_mean_is_identity() {
        let p = OnlineShiftProblem::new(3, 0.5, 0.2, 99).with_surrogate(20_000, 7);
        let x = array![0.4, -1.0, 2.0];
        let (g, _) = crate::problem::full_inner(&p, &x).unwrap();
        // surrogate mean should sit within MC error of x
        for (gv, xv) in g.iter().zip(x.iter()) {
            assert!((gv - xv).abs() < 0.02, "{gv} vs {xv}");
        }
    }
}
