//! Local control laws over the fitted curves.
//!
//! Each DER measures only its own voltage and moves its set point toward
//! its curve:
//!
//! ```text
//!     incremental       q' = q + eps * (phi(v) - q)
//!     non-incremental   q' = phi(v)
//! ```
//!
//! The non-incremental law is the eps = 1 special case and can oscillate
//! when the curves are steep relative to the network sensitivity. The
//! incremental law contracts whenever
//!
//! ```text
//!     eps < min(1, 2 / (1 + ||X|| M))
//! ```
//!
//! with `X` the DER-block voltage sensitivity and `M` the certified slope
//! bound over all curves. Fixed points are unchanged by eps: they are
//! exactly the points with q = phi(v(q)).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MonotoneNn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    Incremental,
    NonIncremental,
    /// DER set points frozen at their initial values.
    Uncontrolled,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlConfig {
    pub mode: ControlMode,
    /// Step size; ignored for `Uncontrolled`, fixed at 1 for
    /// `NonIncremental`.
    pub epsilon: f64,
    /// Convergence threshold on the set-point update, inf-norm.
    pub tol: f64,
    /// Updates below `tol` must persist this many consecutive iterations.
    pub consecutive: usize,
    pub max_iter: usize,
}

impl ControlConfig {
    pub fn incremental(epsilon: f64) -> Self {
        Self { mode: ControlMode::Incremental, epsilon, tol: 1e-9, consecutive: 5, max_iter: 10_000 }
    }

    pub fn non_incremental() -> Self {
        Self { mode: ControlMode::NonIncremental, epsilon: 1.0, tol: 1e-9, consecutive: 5, max_iter: 10_000 }
    }

    pub fn uncontrolled() -> Self {
        Self { mode: ControlMode::Uncontrolled, epsilon: 0.0, tol: 1e-9, consecutive: 1, max_iter: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == ControlMode::Incremental
            && !(self.epsilon > 0.0 && self.epsilon < 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "incremental control needs 0 < eps < 1, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidInput(format!("bad tolerance {}", self.tol)));
        }
        if self.consecutive == 0 || self.max_iter == 0 {
            return Err(Error::InvalidInput(
                "consecutive and max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One incremental update. For 0 < eps < 1 the result stays inside any box
/// containing both `q` and `phi_v`: the step moves strictly less than the
/// full distance, and round-to-nearest is monotone, so no clamping is
/// needed to preserve the range certificate. At eps = 1 (allowed here for
/// equivalence with the one-shot law) the result may differ from `phi_v`
/// in the last ulp.
pub fn incremental_step(q: &DVector<f64>, phi_v: &DVector<f64>, epsilon: f64) -> DVector<f64> {
    q + epsilon * (phi_v - q)
}

/// One one-shot update: jump straight onto the curve.
pub fn non_incremental_step(phi_v: &DVector<f64>) -> DVector<f64> {
    phi_v.clone()
}

/// Largest provably contracting step size, `min(1, 2 / (1 + x_norm * m))`.
/// `x_norm` is the spectral norm of the DER-block sensitivity, `m` the
/// certified slope bound across all curves.
pub fn epsilon_bound(x_norm: f64, m: f64) -> f64 {
    (2.0 / (1.0 + x_norm * m)).min(1.0)
}

/// Jacobian of the incremental closed-loop map at an operating point:
/// `(1 - eps) I + eps * diag(slopes) * X`, where `slopes[j]` is the j-th
/// curve's derivative at its local voltage.
pub fn closed_loop_jacobian(epsilon: f64, slopes: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let c = slopes.len();
    let mut j = DMatrix::identity(c, c) * (1.0 - epsilon);
    for row in 0..c {
        for col in 0..c {
            j[(row, col)] += epsilon * slopes[row] * x[(row, col)];
        }
    }
    j
}

/// Evaluate every curve's derivative at its own bus voltage.
pub fn local_slopes(curves: &[MonotoneNn], v_local: &DVector<f64>) -> Result<DVector<f64>> {
    if curves.len() != v_local.len() {
        return Err(Error::Dimension(format!(
            "{} curves vs {} local voltages",
            curves.len(),
            v_local.len()
        )));
    }
    Ok(DVector::from_fn(curves.len(), |j, _| curves[j].derivative(v_local[j])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn step_moves_a_fraction_toward_the_curve() {
        let q = DVector::from_vec(vec![0.0]);
        let phi = DVector::from_vec(vec![0.4]);
        let next = incremental_step(&q, &phi, 0.1);
        assert_relative_eq!(next[0], 0.04, epsilon = 1e-16);
    }

    #[test]
    fn fixed_point_is_bitwise_stationary() {
        let q = DVector::from_vec(vec![0.123456789, -0.25]);
        let next = incremental_step(&q, &q, 0.37);
        assert_eq!(next[0].to_bits(), q[0].to_bits());
        assert_eq!(next[1].to_bits(), q[1].to_bits());
    }

    #[test]
    fn unit_step_is_the_one_shot_law() {
        // Dyadic values keep the arithmetic exact.
        let q = DVector::from_vec(vec![0.25, -0.5]);
        let phi = DVector::from_vec(vec![0.75, 0.125]);
        let inc = incremental_step(&q, &phi, 1.0);
        let one = non_incremental_step(&phi);
        assert_eq!(inc, one);
    }

    #[test]
    fn bound_values() {
        assert_eq!(epsilon_bound(1.0, 3.0), 0.5);
        assert_eq!(epsilon_bound(5.0, 0.0), 1.0);
        assert_eq!(epsilon_bound(0.1, 2.0), 1.0);
        assert!(epsilon_bound(0.2, 100.0) < 0.1);
    }

    #[test]
    fn flat_curves_leave_a_scaled_identity() {
        let slopes = DVector::zeros(3);
        let x = DMatrix::from_fn(3, 3, |i, j| 0.1 * (i + j) as f64 + 0.05);
        let j = closed_loop_jacobian(0.3, &slopes, &x);
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 0.7 } else { 0.0 };
                assert_relative_eq!(j[(r, c)], expect, epsilon = 1e-15);
            }
        }
        let j0 = closed_loop_jacobian(0.0, &slopes, &x);
        assert_eq!(j0, DMatrix::identity(3, 3));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        // Two curves coupled through a 2x2 sensitivity; differentiate the
        // full closed-loop map numerically.
        let curves = vec![
            MonotoneNn::new(vec![-0.3, -0.1], vec![0.2, -0.7], 0.4, 1.0, 0.05).unwrap(),
            MonotoneNn::new(vec![-0.25], vec![0.4], 0.25, 1.0, 0.08).unwrap(),
        ];
        let x = DMatrix::from_vec(2, 2, vec![0.12, 0.04, 0.04, 0.09]);
        let v_hat = DVector::from_vec(vec![0.98, 0.99]);
        let eps = 0.4;
        let q0 = DVector::from_vec(vec![0.05, -0.02]);

        let f = |q: &DVector<f64>| -> DVector<f64> {
            let v = &x * q + &v_hat;
            let phi = DVector::from_fn(2, |j, _| curves[j].evaluate(v[j]));
            incremental_step(q, &phi, eps)
        };

        let v0 = &x * &q0 + &v_hat;
        let slopes = local_slopes(&curves, &v0).unwrap();
        let jac = closed_loop_jacobian(eps, &slopes, &x);

        let h = 1e-6;
        for col in 0..2 {
            let mut qp = q0.clone();
            let mut qm = q0.clone();
            qp[col] += h;
            qm[col] -= h;
            let d = (f(&qp) - f(&qm)) / (2.0 * h);
            for row in 0..2 {
                assert!(
                    (d[row] - jac[(row, col)]).abs() <= 1e-6,
                    "({row},{col}): fd {} vs analytic {}",
                    d[row],
                    jac[(row, col)]
                );
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ControlConfig::incremental(0.5).validate().is_ok());
        assert!(ControlConfig::incremental(0.0).validate().is_err());
        assert!(ControlConfig::incremental(1.0).validate().is_err());
        assert!(ControlConfig::non_incremental().validate().is_ok());
        assert!(ControlConfig::uncontrolled().validate().is_ok());
        let mut bad = ControlConfig::incremental(0.5);
        bad.tol = 0.0;
        assert!(bad.validate().is_err());
    }
}
