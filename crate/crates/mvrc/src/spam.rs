//! Nonconvex, nonsmooth sparse additive model with linear component
//! functions `h_j(x_j) = theta_j x_j`.
//!
//! The prediction is `|theta^T x_i|` and the penalized mean squared error is
//! written as a double finite sum: inner components
//! `g_i(theta) = ((y_i - |theta^T x_i|)^2, theta_1^2 x_i1^2, ..., theta_d^2 x_id^2)`
//! and `d + 1` outer components averaging the loss and the per-feature group
//! penalties. The square-root penalty is smoothed on `|w| < 1` by the quartic
//! `1.75 w^2 - 0.75 w^4`, which matches value and slope at `|w| = 1`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::problem::{
    objective_value, CompositionProblem, InnerValue, Jacobian, LipschitzProfile, Point, SampleId,
    Structure,
};
use crate::prox::RegularizerKind;

#[derive(Debug, Clone)]
pub struct SpamProblem {
    inputs: Array2<f64>,
    outputs: Array1<f64>,
    group_weight: f64,
    regularizer: RegularizerKind,
    profile: LipschitzProfile,
}

/// Smoothed square-root penalty.
fn penalty(w: f64) -> f64 {
    if w.abs() >= 1.0 {
        w.abs().sqrt()
    } else {
        let w2 = w * w;
        1.75 * w2 - 0.75 * w2 * w2
    }
}

fn penalty_derivative(w: f64) -> f64 {
    if w.abs() >= 1.0 {
        w.signum() / (2.0 * w.abs().sqrt())
    } else {
        3.5 * w - 3.0 * w * w * w
    }
}

/// Subgradient convention at the |.| kink: sign(0) = 0.
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl SpamProblem {
    pub fn new(
        inputs: Array2<f64>,
        outputs: Array1<f64>,
        group_weight: f64,
        regularizer: RegularizerKind,
        region_radius: f64,
    ) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::config("spam needs a nonempty input matrix"));
        }
        if inputs.nrows() != outputs.len() {
            return Err(Error::DimensionMismatch {
                context: "spam targets",
                expected: inputs.nrows(),
                got: outputs.len(),
            });
        }
        if !(group_weight >= 0.0 && group_weight.is_finite()) {
            return Err(Error::config(format!(
                "group weight must be finite and >= 0, got {group_weight}"
            )));
        }
        regularizer.validate()?;
        let profile = estimate_profile(&inputs, &outputs, group_weight, region_radius);
        profile.validate()?;
        Ok(SpamProblem {
            inputs,
            outputs,
            group_weight,
            regularizer,
            profile,
        })
    }

    pub fn objective(&self, theta: &Point) -> Result<f64> {
        objective_value(self, theta)
    }

    pub fn group_weight(&self) -> f64 {
        self.group_weight
    }
}

fn estimate_profile(
    inputs: &Array2<f64>,
    outputs: &Array1<f64>,
    group_weight: f64,
    radius: f64,
) -> LipschitzProfile {
    let d = inputs.ncols() as f64;
    let x_max = inputs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let y_max = outputs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // |theta^T x_i| <= x_max radius sqrt(d) on ||theta|| <= radius
    let s_max = x_max * radius * d.sqrt();
    let resid_max = y_max + s_max;
    // first Jacobian row has norm <= 2 resid_max x_max sqrt(d); the diagonal
    // block is bounded by 2 radius x_max^2 per row
    let l_g = (4.0 * (resid_max * x_max).powi(2) * d
        + 4.0 * (radius * x_max * x_max).powi(2) * d)
        .sqrt();
    let cap_l_g = 2.0 * x_max * x_max * (d + 1.0);
    // |penalty'| <= 1.455 globally (max of 3.5 w - 3 w^3 on [-1, 1])
    let l_f = (1.0f64).max(1.455 * group_weight);
    // |penalty''| <= 5.5 globally
    let cap_l_f = (5.5 * group_weight).max(1e-9);
    LipschitzProfile::new(l_f, cap_l_f, l_g, cap_l_g)
}

impl CompositionProblem for SpamProblem {
    fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    fn inner_dim(&self) -> usize {
        self.inputs.ncols() + 1
    }

    fn inner_structure(&self) -> Structure {
        Structure::FiniteSum(self.inputs.nrows())
    }

    fn outer_structure(&self) -> Structure {
        Structure::FiniteSum(self.inputs.ncols() + 1)
    }

    fn inner_value(&self, id: SampleId, theta: &Point) -> InnerValue {
        let i = id as usize % self.inputs.nrows();
        let row = self.inputs.row(i);
        let s = row.dot(theta);
        let resid = self.outputs[i] - s.abs();
        let mut g = Array1::zeros(self.inner_dim());
        g[0] = resid * resid;
        for j in 0..self.dim() {
            let v = theta[j] * row[j];
            g[j + 1] = v * v;
        }
        g
    }

    fn inner_jacobian(&self, id: SampleId, theta: &Point) -> Jacobian {
        let i = id as usize % self.inputs.nrows();
        let row = self.inputs.row(i);
        let s = row.dot(theta);
        let resid = self.outputs[i] - s.abs();
        let mut jac = Array2::zeros((self.inner_dim(), self.dim()));
        let scale = -2.0 * resid * sign0(s);
        for j in 0..self.dim() {
            jac[[0, j]] = scale * row[j];
            jac[[j + 1, j]] = 2.0 * theta[j] * row[j] * row[j];
        }
        jac
    }

    fn outer_value(&self, id: SampleId, w: &InnerValue) -> f64 {
        let k = id as usize % self.inner_dim();
        if k == 0 {
            w[0]
        } else {
            self.group_weight * penalty(w[k])
        }
    }

    fn outer_gradient(&self, id: SampleId, w: &InnerValue) -> InnerValue {
        let k = id as usize % self.inner_dim();
        let mut grad = Array1::zeros(self.inner_dim());
        if k == 0 {
            grad[0] = 1.0;
        } else {
            grad[k] = self.group_weight * penalty_derivative(w[k]);
        }
        grad
    }

    fn lipschitz(&self) -> &LipschitzProfile {
        &self.profile
    }

    fn regularizer(&self) -> &RegularizerKind {
        &self.regularizer
    }
}
