//! Nonlinear power-flow oracle.
//!
//! Solves the exact nodal equations by the classic Z-bus fixed point: with
//! the substation pinned at 1 p.u. and complex net injections `s` at the
//! interior buses,
//!
//! ```text
//!     u  <-  Ztil * conj(s ./ u) + u_hat
//! ```
//!
//! starting from the no-load profile. In the distribution regime (injections
//! well below the feeder's short-circuit capacity) the map is a contraction
//! and settles in a handful of iterations. The oracle exists to audit the
//! linear model, so the convergence tolerance is strict by default.

use nalgebra::{DMatrix, DVector, Dyn};

use crate::admittance::{AdmittanceMatrix, C64};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Clone)]
pub struct PowerFlowResult {
    /// Complex interior voltages.
    pub u: DVector<C64>,
    pub iterations: usize,
    /// Final power-mismatch norm `max_n |u_n * conj(i_n) - s_n|`.
    pub residual: f64,
}

/// Factorized interior system, reusable across many solves (the simulation
/// harness calls this once per controller iteration).
pub struct ZbusSolver {
    lu: nalgebra::LU<C64, Dyn, Dyn>,
    ytilde: DMatrix<C64>,
    y_full: DMatrix<C64>,
    u_hat: DVector<C64>,
}

impl ZbusSolver {
    pub fn new(adm: &AdmittanceMatrix) -> Result<Self> {
        let ytilde = adm.ytilde();
        let lu = ytilde.clone().lu();
        let y0 = adm.y0();
        let u_hat = lu.solve(&(-y0)).ok_or_else(|| Error::Singular {
            context: "interior admittance block".into(),
            diagnostic: "LU solve for the no-load voltage failed".into(),
        })?;
        Ok(ZbusSolver { lu, ytilde, y_full: adm.y.clone(), u_hat })
    }

    pub fn n_interior(&self) -> usize {
        self.u_hat.len()
    }

    pub fn u_hat(&self) -> &DVector<C64> {
        &self.u_hat
    }

    /// Power mismatch of a candidate voltage profile against injections `s`.
    fn mismatch(&self, u: &DVector<C64>, s: &DVector<C64>) -> f64 {
        let i = &self.ytilde * (u - &self.u_hat);
        (0..u.len())
            .map(|n| (u[n] * i[n].conj() - s[n]).norm())
            .fold(0.0, f64::max)
    }

    pub fn solve(&self, s: &DVector<C64>, tol: f64, max_iter: usize) -> Result<PowerFlowResult> {
        if s.len() != self.n_interior() {
            return Err(Error::Dimension(format!(
                "injection vector has length {}, feeder has {} interior buses",
                s.len(),
                self.n_interior()
            )));
        }
        let mut u = self.u_hat.clone();
        let mut residual = f64::INFINITY;
        for it in 1..=max_iter {
            let rhs = DVector::from_fn(s.len(), |n, _| (s[n] / u[n]).conj());
            let w = self.lu.solve(&rhs).ok_or_else(|| Error::Singular {
                context: "interior admittance block".into(),
                diagnostic: "LU solve failed mid-iteration".into(),
            })?;
            let u_next = w + &self.u_hat;
            if u_next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::NoConvergence { iterations: it, residual });
            }
            u = u_next;
            residual = self.mismatch(&u, s);
            if residual <= tol {
                return Ok(PowerFlowResult { u, iterations: it, residual });
            }
        }
        Err(Error::NoConvergence { iterations: max_iter, residual })
    }

    /// Total network active loss for a converged profile: the real power
    /// flowing in through all nodal injections, substation included.
    pub fn total_loss(&self, u_interior: &DVector<C64>) -> f64 {
        let n = u_interior.len();
        let mut u_full = DVector::<C64>::zeros(n + 1);
        u_full[0] = C64::new(1.0, 0.0);
        for k in 0..n {
            u_full[k + 1] = u_interior[k];
        }
        let i_full = &self.y_full * &u_full;
        (0..=n).map(|k| (u_full[k] * i_full[k].conj()).re).sum()
    }
}

/// One-shot solve of the exact power flow; see `ZbusSolver` for the scheme.
pub fn zbus_powerflow(
    adm: &AdmittanceMatrix,
    s: &DVector<C64>,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowResult> {
    ZbusSolver::new(adm)?.solve(s, tol, max_iter)
}
