//! Risk-averse portfolio optimization.
//!
//! For per-unit return rows `R_i` the return of allocation `x` at time `i` is
//! `h_i(x) = R_i^T x`. Minimizing `-mean(h) + risk_weight * var(h)` is the
//! composition `f(g(x))` with `g_i(x) = (R_i^T x, (R_i^T x)^2)` and
//! `f(y1, y2) = -y1 - risk_weight * (y1^2 - y2)`, optionally plus an l1 term.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::problem::{
    objective_value, CompositionProblem, InnerValue, Jacobian, LipschitzProfile, Point, SampleId,
    Structure,
};
use crate::prox::RegularizerKind;

#[derive(Debug, Clone)]
pub struct PortfolioProblem {
    returns: Array2<f64>,
    risk_weight: f64,
    regularizer: RegularizerKind,
    profile: LipschitzProfile,
}

impl PortfolioProblem {
    /// `returns` is the `n x d` matrix of per-unit returns. Smoothness
    /// constants are estimated on the ball `||x|| <= region_radius` (the
    /// outer function is quadratic, so no global Lipschitz constant exists).
    pub fn new(
        returns: Array2<f64>,
        risk_weight: f64,
        regularizer: RegularizerKind,
        region_radius: f64,
    ) -> Result<Self> {
        if returns.nrows() == 0 || returns.ncols() == 0 {
            return Err(Error::config("portfolio needs a nonempty return matrix"));
        }
        if !(risk_weight >= 0.0 && risk_weight.is_finite()) {
            return Err(Error::config(format!(
                "risk weight must be finite and >= 0, got {risk_weight}"
            )));
        }
        regularizer.validate()?;
        let profile = estimate_profile(&returns, risk_weight, region_radius);
        profile.validate()?;
        Ok(PortfolioProblem {
            returns,
            risk_weight,
            regularizer,
            profile,
        })
    }

    pub fn risk_weight(&self) -> f64 {
        self.risk_weight
    }

    pub fn returns(&self) -> &Array2<f64> {
        &self.returns
    }

    /// Full objective `f(g(x)) + r(x)`.
    pub fn objective(&self, x: &Point) -> Result<f64> {
        objective_value(self, x)
    }
}

fn estimate_profile(returns: &Array2<f64>, risk_weight: f64, radius: f64) -> LipschitzProfile {
    let mut max_row_norm: f64 = 0.0;
    for row in returns.rows() {
        max_row_norm = max_row_norm.max(row.dot(&row).sqrt());
    }
    let r = max_row_norm.max(1e-12);
    // ||g_i'(x)||_F^2 = ||R_i||^2 (1 + 4 (R_i^T x)^2), |R_i^T x| <= ||R_i|| radius
    let l_g = r * (1.0 + 4.0 * (radius * r).powi(2)).sqrt();
    let cap_l_g = 2.0 * r * r;
    // |y1| <= ||R_i|| radius on the region
    let y1_max = r * radius;
    let l_f = ((1.0 + 2.0 * risk_weight * y1_max).powi(2) + risk_weight * risk_weight).sqrt();
    let cap_l_f = (2.0 * risk_weight).max(1e-9);
    LipschitzProfile::new(l_f, cap_l_f, l_g, cap_l_g)
}

impl CompositionProblem for PortfolioProblem {
    fn dim(&self) -> usize {
        self.returns.ncols()
    }

    fn inner_dim(&self) -> usize {
        2
    }

    fn inner_structure(&self) -> Structure {
        Structure::FiniteSum(self.returns.nrows())
    }

    fn outer_structure(&self) -> Structure {
        Structure::FiniteSum(1)
    }

    fn inner_value(&self, id: SampleId, x: &Point) -> InnerValue {
        let row = self.returns.row(id as usize % self.returns.nrows());
        let h = row.dot(x);
        ndarray::array![h, h * h]
    }

    fn inner_jacobian(&self, id: SampleId, x: &Point) -> Jacobian {
        let row = self.returns.row(id as usize % self.returns.nrows());
        let h = row.dot(x);
        let mut jac = Array2::zeros((2, self.dim()));
        for (j, v) in row.iter().enumerate() {
            jac[[0, j]] = *v;
            jac[[1, j]] = 2.0 * h * v;
        }
        jac
    }

    fn outer_value(&self, _id: SampleId, y: &InnerValue) -> f64 {
        -y[0] - self.risk_weight * (y[0] * y[0] - y[1])
    }

    fn outer_gradient(&self, _id: SampleId, y: &InnerValue) -> InnerValue {
        ndarray::array![-1.0 - 2.0 * self.risk_weight * y[0], self.risk_weight]
    }

    fn lipschitz(&self) -> &LipschitzProfile {
        &self.profile
    }

    fn regularizer(&self) -> &RegularizerKind {
        &self.regularizer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{full_gradient, full_inner};
    use ndarray::array;

    fn single_row_problem() -> PortfolioProblem {
        PortfolioProblem::new(
            Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap(),
            0.2,
            RegularizerKind::None,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn inner_oracle_matches_hand_values() {
        let p = single_row_problem();
        let x = array![2.0, 3.0];
        let (g, jac) = full_inner(&p, &x).unwrap();
        assert_eq!(g, array![2.0, 4.0]);
        assert_eq!(jac.row(0).to_owned(), array![1.0, 0.0]);
        assert_eq!(jac.row(1).to_owned(), array![4.0, 0.0]);
    }

    #[test]
    fn objective_matches_hand_values() {
        let p = single_row_problem();
        let x = array![2.0, 3.0];
        // g = (2, 4); f = -2 - 0.2 (4 - 4) = -2
        assert!((p.objective(&x).unwrap() - (-2.0)).abs() < 1e-15);
        assert_eq!(p.objective(&ndarray::Array1::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn zero_risk_weight_reduces_to_negative_mean_return() {
        let returns =
            Array2::from_shape_vec((3, 2), vec![0.1, 0.2, -0.05, 0.0, 0.3, 0.1]).unwrap();
        let mean = returns.mean_axis(ndarray::Axis(0)).unwrap();
        let p = PortfolioProblem::new(returns, 0.0, RegularizerKind::None, 10.0).unwrap();
        let x = array![1.5, -0.5];
        let expect = -mean.dot(&x);
        assert!((p.objective(&x).unwrap() - expect).abs() < 1e-14);
        let grad = full_gradient(&p, &x).unwrap();
        for (gv, mv) in grad.iter().zip(mean.iter()) {
            assert!((gv + mv).abs() < 1e-14);
        }
    }

    #[test]
    fn objective_matches_brute_force_mean_variance() {
        let returns = Array2::from_shape_vec(
            (5, 3),
            vec![
                0.1, -0.2, 0.05, 0.3, 0.0, -0.1, -0.15, 0.25, 0.2, 0.05, 0.05, 0.0, -0.3, 0.1, 0.4,
            ],
        )
        .unwrap();
        let lam = 0.2;
        let p = PortfolioProblem::new(returns.clone(), lam, RegularizerKind::l1(0.01), 10.0)
            .unwrap();
        let x = array![0.7, -1.1, 0.4];

        // brute force from raw returns
        let h: Vec<f64> = returns.rows().into_iter().map(|r| r.dot(&x)).collect();
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        let var = h.iter().map(|v| v * v).sum::<f64>() / h.len() as f64 - mean * mean;
        let reg = 0.01 * x.iter().map(|v| v.abs()).sum::<f64>();
        let expect = -mean + lam * var + reg;

        let got = p.objective(&x).unwrap();
        assert!(
            (got - expect).abs() <= 1e-12 * expect.abs().max(1.0),
            "{got} vs {expect}"
        );
    }
}
