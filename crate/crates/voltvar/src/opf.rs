//! Reactive dispatch: strictly convex loss minimization over the DER box
//! with a per-bus voltage band.
//!
//! ```text
//!     minimize    q^T R q + q^T w + l_hat
//!     subject to  q_min <= q <= q_max
//!                 v_min <= S q + v_hat <= v_max
//! ```
//!
//! `R` positive definite makes the minimizer unique. The solver is ADMM on
//! the splitting `f(q) + indicator(z)`, `z = [q; v - v_hat]`: the q-update is
//! a single Cholesky solve against a cached factorization, the z-update is a
//! closed-form clamp onto the box-and-band rectangle, and the scaled duals
//! recover the KKT multipliers. Over-relaxation (alpha = 1.6) plus residual
//! balancing on the penalty keep the iteration count flat across loadings.
//!
//! Termination is on the actual certificate, not the consensus residuals:
//! the loop exits once stationarity, primal feasibility and complementarity
//! are all within `tol`. Infeasible voltage bands are detected by dual
//! blow-up with stalled primal violation, and reported with the worst bus.
//!
//! `check_kkt` re-derives multipliers from scratch (active-set detection +
//! non-negative least squares), so it certifies a candidate point without
//! trusting anything the solver produced.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linear::{loss_coefficients, voltage_offset, LinearModel};
use crate::network::FeederNetwork;

/// Reported solutions keep voltages inside the band up to this slack.
pub const FEAS_TOL: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// Active-set detection width for multiplier recovery.
const ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct OpfProblem {
    /// Quadratic coefficient, C x C, symmetric positive definite.
    pub r: DMatrix<f64>,
    pub w: DVector<f64>,
    pub l_hat: f64,
    /// Voltage sensitivity to the DER vector, N x C, natural bus-row order.
    pub s: DMatrix<f64>,
    pub v_hat: DVector<f64>,
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// Lagrangian gradient norm with recovered multipliers, inf-norm.
    pub stationarity: f64,
    /// Worst constraint violation.
    pub primal: f64,
    /// Worst multiplier-times-slack product.
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpfStatus {
    Optimal,
    /// Voltage band unreachable; carries the worst bus (1-based id) and its
    /// residual violation at the least-infeasible iterate seen.
    Infeasible { bus: usize, violation: f64 },
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct OpfSolution {
    pub q_star: DVector<f64>,
    pub v_star: DVector<f64>,
    pub loss_star: f64,
    pub kkt: KktResidual,
    pub status: OpfStatus,
    pub iterations: usize,
}

impl OpfProblem {
    pub fn n_der(&self) -> usize {
        self.r.nrows()
    }

    pub fn n_bus(&self) -> usize {
        self.s.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_der();
        let n = self.n_bus();
        if self.r.ncols() != c
            || self.w.len() != c
            || self.s.ncols() != c
            || self.v_hat.len() != n
            || self.q_min.len() != c
            || self.q_max.len() != c
            || self.v_min.len() != n
            || self.v_max.len() != n
        {
            return Err(Error::Dimension("OPF field shapes disagree".into()));
        }
        if c == 0 {
            return Err(Error::InvalidInput("OPF needs at least one DER".into()));
        }
        for i in 0..c {
            if !(self.q_min[i] <= self.q_max[i]) {
                return Err(Error::InvalidInput(format!(
                    "DER {i}: empty box [{}, {}]",
                    self.q_min[i], self.q_max[i]
                )));
            }
        }
        // Strict convexity: the symmetric part must admit a Cholesky factor.
        let sym = (&self.r + self.r.transpose()) * 0.5;
        if nalgebra::Cholesky::new(sym).is_none() {
            return Err(Error::InvalidInput("quadratic coefficient is not positive definite".into()));
        }
        Ok(())
    }

    pub fn loss(&self, q: &DVector<f64>) -> f64 {
        (q.transpose() * &self.r * q)[(0, 0)] + q.dot(&self.w) + self.l_hat
    }

    pub fn voltage(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.s * q + &self.v_hat
    }

    /// Worst violation over box and band at `q` (0 when feasible).
    pub fn violation(&self, q: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_der() {
            worst = worst.max(self.q_min[i] - q[i]).max(q[i] - self.q_max[i]);
        }
        let v = self.voltage(q);
        for j in 0..self.n_bus() {
            worst = worst.max(self.v_min[j] - v[j]).max(v[j] - self.v_max[j]);
        }
        worst
    }

    fn worst_voltage_violation(&self, q: &DVector<f64>) -> (usize, f64) {
        let v = self.voltage(q);
        let mut bus = 1;
        let mut worst = f64::NEG_INFINITY;
        for j in 0..self.n_bus() {
            let viol = (self.v_min[j] - v[j]).max(v[j] - self.v_max[j]);
            if viol > worst {
                worst = viol;
                bus = j + 1;
            }
        }
        (bus, worst)
    }
}

/// Build the dispatch problem for fixed exogenous injections.
pub fn assemble_opf(
    model: &LinearModel,
    p: &DVector<f64>,
    q_l: &DVector<f64>,
    network: &FeederNetwork,
) -> Result<OpfProblem> {
    let (w, l_hat) = loss_coefficients(model, p, q_l)?;
    let v_hat = voltage_offset(model, p, q_l)?;
    let (q_min, q_max) = network.der_box();
    let (v_min, v_max) = network.voltage_band();
    let problem = OpfProblem {
        r: model.r_cc.clone(),
        w,
        l_hat,
        s: model.der_columns(),
        v_hat,
        q_min: DVector::from_vec(q_min),
        q_max: DVector::from_vec(q_max),
        v_min: DVector::from_vec(v_min),
        v_max: DVector::from_vec(v_max),
    };
    problem.validate()?;
    Ok(problem)
}

/// Signed multipliers against constraint slacks: positive pushes down from
/// the upper bound, negative pushes up from the lower one.
fn residuals_from_multipliers(
    problem: &OpfProblem,
    q: &DVector<f64>,
    y_q: &DVector<f64>,
    y_v: &DVector<f64>,
) -> KktResidual {
    let c = problem.n_der();
    let n = problem.n_bus();
    let r_sym = (&problem.r + problem.r.transpose()) * 0.5;
    let grad = 2.0 * &r_sym * q + &problem.w + y_q + problem.s.transpose() * y_v;
    let stationarity = grad.amax();

    let primal = problem.violation(q).max(0.0);

    let v = problem.voltage(q);
    let mut comp: f64 = 0.0;
    for i in 0..c {
        let slack = if y_q[i] >= 0.0 { problem.q_max[i] - q[i] } else { q[i] - problem.q_min[i] };
        comp = comp.max((y_q[i].abs() * slack.max(0.0)).abs());
    }
    for j in 0..n {
        let slack = if y_v[j] >= 0.0 { problem.v_max[j] - v[j] } else { v[j] - problem.v_min[j] };
        comp = comp.max((y_v[j].abs() * slack.max(0.0)).abs());
    }
    KktResidual { stationarity, primal, complementarity: comp }
}

pub fn solve_opf(problem: &OpfProblem, tol: f64, max_iter: usize) -> Result<OpfSolution> {
    problem.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let c = problem.n_der();
    let n = problem.n_bus();
    let r_sym = (&problem.r + problem.r.transpose()) * 0.5;

    // Presolve: if the unconstrained minimizer sits strictly inside every
    // constraint, it is the answer to working precision.
    if let Some(chol) = nalgebra::Cholesky::new(2.0 * &r_sym) {
        let q_free = chol.solve(&(-&problem.w));
        let margin = FEAS_TOL;
        let interior = (0..c).all(|i| {
            q_free[i] > problem.q_min[i] + margin && q_free[i] < problem.q_max[i] - margin
        }) && {
            let v = problem.voltage(&q_free);
            (0..n).all(|j| v[j] > problem.v_min[j] + margin && v[j] < problem.v_max[j] - margin)
        };
        if interior {
            let kkt = residuals_from_multipliers(problem, &q_free, &DVector::zeros(c), &DVector::zeros(n));
            let v_star = problem.voltage(&q_free);
            let loss_star = problem.loss(&q_free);
            return Ok(OpfSolution {
                q_star: q_free,
                v_star,
                loss_star,
                kkt,
                status: OpfStatus::Optimal,
                iterations: 0,
            });
        }
    }

    let sts = problem.s.transpose() * &problem.s;
    let lo_v = &problem.v_min - &problem.v_hat;
    let hi_v = &problem.v_max - &problem.v_hat;

    let mut rho: f64 = 1.0;
    const RHO_MIN: f64 = 1e-6;
    const RHO_MAX: f64 = 1e6;
    const ALPHA: f64 = 1.6;

    let factor = |rho: f64| -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let m = 2.0 * &r_sym + rho * (DMatrix::identity(c, c) + &sts);
        nalgebra::Cholesky::new(m).ok_or_else(|| Error::Singular {
            context: "ADMM normal matrix".into(),
            diagnostic: format!("rho = {rho:.3e}"),
        })
    };
    let mut chol = factor(rho)?;

    let mut z_q = DVector::<f64>::zeros(c);
    let mut z_v = DVector::<f64>::zeros(n);
    // Feasible-for-the-box starting consensus point keeps early duals tame.
    for i in 0..c {
        z_q[i] = 0.0f64.clamp(problem.q_min[i], problem.q_max[i]);
    }
    for j in 0..n {
        z_v[j] = 0.0f64.clamp(lo_v[j], hi_v[j]);
    }
    let mut u_q = DVector::<f64>::zeros(c);
    let mut u_v = DVector::<f64>::zeros(n);

    let mut q = z_q.clone();
    let mut best_violation = f64::INFINITY;
    let mut last_improvement = 0usize;
    let mut kkt = residuals_from_multipliers(problem, &q, &DVector::zeros(c), &DVector::zeros(n));

    for iter in 1..=max_iter {
        let rhs = -&problem.w + rho * (&z_q - &u_q) + rho * (problem.s.transpose() * (&z_v - &u_v));
        q = chol.solve(&rhs);

        let aq_v = &problem.s * &q;
        let h_q = ALPHA * &q + (1.0 - ALPHA) * &z_q;
        let h_v = ALPHA * &aq_v + (1.0 - ALPHA) * &z_v;

        let z_q_old = z_q.clone();
        let z_v_old = z_v.clone();
        for i in 0..c {
            z_q[i] = (h_q[i] + u_q[i]).clamp(problem.q_min[i], problem.q_max[i]);
        }
        for j in 0..n {
            z_v[j] = (h_v[j] + u_v[j]).clamp(lo_v[j], hi_v[j]);
        }
        u_q += &h_q - &z_q;
        u_v += &h_v - &z_v;

        // Track how close the raw iterate gets to feasibility; stalling here
        // while the duals blow up is the infeasibility signature.
        let violation = problem.violation(&q);
        if violation < best_violation - 1e-12 {
            best_violation = violation;
            last_improvement = iter;
        }

        if iter % 25 == 0 || iter == max_iter {
            let y_q = rho * &u_q;
            let y_v = rho * &u_v;
            kkt = residuals_from_multipliers(problem, &q, &y_q, &y_v);
            if kkt.stationarity <= tol && kkt.primal <= tol && kkt.complementarity <= tol {
                let v_star = problem.voltage(&q);
                let loss_star = problem.loss(&q);
                return Ok(OpfSolution {
                    q_star: q,
                    v_star,
                    loss_star,
                    kkt,
                    status: OpfStatus::Optimal,
                    iterations: iter,
                });
            }

            let dual_norm = y_q.amax().max(y_v.amax());
            if dual_norm > 1e6 && iter.saturating_sub(last_improvement) >= 100 {
                let (bus, worst) = problem.worst_voltage_violation(&q);
                let v_star = problem.voltage(&q);
                let loss_star = problem.loss(&q);
                return Ok(OpfSolution {
                    q_star: q,
                    v_star,
                    loss_star,
                    kkt,
                    status: OpfStatus::Infeasible { bus, violation: worst },
                    iterations: iter,
                });
            }

            // Residual balancing; duals are stored scaled, so they shrink or
            // grow inversely with rho.
            let r_prim = {
                let dq = &q - &z_q;
                let dv = &aq_v - &z_v;
                (dq.norm_squared() + dv.norm_squared()).sqrt()
            };
            let r_dual = rho * {
                let d = (&z_q - &z_q_old) + problem.s.transpose() * (&z_v - &z_v_old);
                d.norm()
            };
            if r_prim > 10.0 * r_dual && rho < RHO_MAX {
                rho *= 2.0;
                u_q /= 2.0;
                u_v /= 2.0;
                chol = factor(rho)?;
            } else if r_dual > 10.0 * r_prim && rho > RHO_MIN {
                rho /= 2.0;
                u_q *= 2.0;
                u_v *= 2.0;
                chol = factor(rho)?;
            }
        }
    }

    let v_star = problem.voltage(&q);
    let loss_star = problem.loss(&q);
    Ok(OpfSolution {
        q_star: q,
        v_star,
        loss_star,
        kkt,
        status: OpfStatus::MaxIter,
        iterations: max_iter,
    })
}

/// Certify a candidate point without trusting solver state: detect the
/// active set, recover nonnegative multipliers by least squares, and report
/// the three KKT residuals.
pub fn check_kkt(problem: &OpfProblem, q_c: &DVector<f64>) -> Result<KktResidual> {
    problem.validate()?;
    if q_c.len() != problem.n_der() {
        return Err(Error::Dimension(format!(
            "candidate has length {}, problem has {} DERs",
            q_c.len(),
            problem.n_der()
        )));
    }
    let c = problem.n_der();
    let n = problem.n_bus();
    let r_sym = (&problem.r + problem.r.transpose()) * 0.5;
    let grad = 2.0 * &r_sym * q_c + &problem.w;
    let v = problem.voltage(q_c);

    // Columns of the active-constraint gradient matrix, each paired with the
    // slack of its constraint (for the complementarity report).
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut slacks: Vec<f64> = Vec::new();
    for i in 0..c {
        if q_c[i] - problem.q_min[i] <= ACTIVE_TOL {
            let mut e = DVector::zeros(c);
            e[i] = -1.0;
            cols.push(e);
            slacks.push(q_c[i] - problem.q_min[i]);
        }
        if problem.q_max[i] - q_c[i] <= ACTIVE_TOL {
            let mut e = DVector::zeros(c);
            e[i] = 1.0;
            cols.push(e);
            slacks.push(problem.q_max[i] - q_c[i]);
        }
    }
    for j in 0..n {
        if v[j] - problem.v_min[j] <= ACTIVE_TOL {
            cols.push(-problem.s.row(j).transpose());
            slacks.push(v[j] - problem.v_min[j]);
        }
        if problem.v_max[j] - v[j] <= ACTIVE_TOL {
            cols.push(problem.s.row(j).transpose());
            slacks.push(problem.v_max[j] - v[j]);
        }
    }

    let primal = problem.violation(q_c).max(0.0);
    if cols.is_empty() {
        return Ok(KktResidual { stationarity: grad.amax(), primal, complementarity: 0.0 });
    }

    let b = DMatrix::from_columns(&cols);
    let lambda = nnls(&b, &(-&grad));
    let residual = &grad + &b * &lambda;
    let mut comp: f64 = 0.0;
    for (k, s) in slacks.iter().enumerate() {
        comp = comp.max((lambda[k] * s.max(0.0)).abs());
    }
    Ok(KktResidual { stationarity: residual.amax(), primal, complementarity: comp })
}

/// Lawson-Hanson non-negative least squares: argmin_{x >= 0} ||a x - y||_2.
/// Problem sizes here are tiny (columns = active constraints), so the plain
/// active-set method with an SVD subproblem solve is plenty.
fn nnls(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let m = a.ncols();
    let mut x = DVector::<f64>::zeros(m);
    let mut passive = vec![false; m];
    let tol = 1e-12 * a.amax().max(1.0) * y.amax().max(1.0);

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..m).filter(|&k| passive[k]).collect();
        let sub = a.select_columns(&idx);
        let sol = sub
            .clone()
            .svd(true, true)
            .solve(y, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::<f64>::zeros(m);
        for (slot, &k) in idx.iter().enumerate() {
            full[k] = sol[slot];
        }
        full
    };

    for _ in 0..(4 * m + 8) {
        let gradient = a.transpose() * (y - a * &x);
        let candidate = (0..m)
            .filter(|&k| !passive[k])
            .max_by(|&i, &j| gradient[i].partial_cmp(&gradient[j]).unwrap());
        match candidate {
            Some(k) if gradient[k] > tol => passive[k] = true,
            _ => break,
        }

        loop {
            let trial = solve_passive(&passive);
            let negative: Vec<usize> =
                (0..m).filter(|&k| passive[k] && trial[k] <= 0.0).collect();
            if negative.is_empty() {
                x = trial;
                break;
            }
            // Step back to the boundary and drop what hit zero.
            let mut alpha = f64::INFINITY;
            for &k in &negative {
                let denom = x[k] - trial[k];
                if denom > 0.0 {
                    alpha = alpha.min(x[k] / denom);
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x = &x + alpha * (&trial - &x);
            for k in 0..m {
                if passive[k] && x[k] <= 1e-14 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admittance::build_admittance;
    use crate::fixtures;
    use crate::linear::build_linear_model;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_problem(q_min: f64, q_max: f64) -> OpfProblem {
        OpfProblem {
            r: DMatrix::from_element(1, 1, 0.1),
            w: DVector::from_element(1, 0.02),
            l_hat: 0.0,
            s: DMatrix::from_element(1, 1, 0.1),
            v_hat: DVector::from_element(1, 1.0),
            q_min: DVector::from_element(1, q_min),
            q_max: DVector::from_element(1, q_max),
            v_min: DVector::from_element(1, -1e6),
            v_max: DVector::from_element(1, 1e6),
        }
    }

    #[test]
    fn scalar_interior_minimum() {
        // Slack band, wide box: q* = -w / 2R = -0.1.
        let sol = solve_opf(&scalar_problem(-0.4, 0.4), 1e-12, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        assert!((sol.q_star[0] + 0.1).abs() <= 1e-10, "q* = {}", sol.q_star[0]);
        assert!(sol.kkt.max() <= 1e-12);
    }

    #[test]
    fn scalar_clamped_at_lower_box_edge() {
        let sol = solve_opf(&scalar_problem(0.0, 0.4), 1e-12, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        assert!(sol.q_star[0].abs() <= 1e-10, "q* = {}", sol.q_star[0]);
    }

    #[test]
    fn assemble_matches_independent_multiply() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let model = build_linear_model(&adm, &net).unwrap();
        let p = DVector::from_element(6, -0.04);
        let q_l = DVector::from_vec(vec![-0.02, -0.03, -0.01, -0.02]);
        let prob = assemble_opf(&model, &p, &q_l, &net).unwrap();

        let w_direct = 2.0 * &model.r_cl * &q_l;
        for i in 0..prob.n_der() {
            assert_relative_eq!(prob.w[i], w_direct[i], epsilon = 1e-15);
        }

        let zero_l = DVector::zeros(4);
        let prob0 = assemble_opf(&model, &DVector::zeros(6), &zero_l, &net).unwrap();
        assert_eq!(prob0.w.amax(), 0.0);
        assert_eq!(prob0.l_hat, 0.0);
    }

    #[test]
    fn two_der_matches_brute_force() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let model = build_linear_model(&adm, &net).unwrap();
        let p = DVector::from_vec(vec![-0.05, -0.08, -0.06, -0.07, 0.01, -0.04]);
        let q_l = DVector::from_vec(vec![-0.03, -0.04, -0.02, -0.03]);
        let prob = assemble_opf(&model, &p, &q_l, &net).unwrap();
        let sol = solve_opf(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);

        // Exhaustive scan of the 2-D box at 1e-3 steps, keeping band-feasible
        // points only.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let steps = |lo: f64, hi: f64| {
            let k = ((hi - lo) / 1e-3).round() as usize;
            (0..=k).map(move |i| lo + i as f64 * 1e-3)
        };
        for q0 in steps(prob.q_min[0], prob.q_max[0]) {
            for q1 in steps(prob.q_min[1], prob.q_max[1]) {
                let q = DVector::from_vec(vec![q0, q1]);
                if prob.violation(&q) > FEAS_TOL {
                    continue;
                }
                let l = prob.loss(&q);
                if l < best.0 {
                    best = (l, q0, q1);
                }
            }
        }
        assert!((sol.q_star[0] - best.1).abs() <= 2e-3, "{} vs {}", sol.q_star[0], best.1);
        assert!((sol.q_star[1] - best.2).abs() <= 2e-3, "{} vs {}", sol.q_star[1], best.2);
        assert!(sol.loss_star <= best.0 + 1e-9);
    }

    #[test]
    fn kkt_certifies_solver_output_independently() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let model = build_linear_model(&adm, &net).unwrap();
        let p = DVector::from_vec(vec![-0.05, -0.08, -0.06, -0.07, 0.01, -0.04]);
        let q_l = DVector::from_vec(vec![-0.03, -0.04, -0.02, -0.03]);
        let prob = assemble_opf(&model, &p, &q_l, &net).unwrap();
        let sol = solve_opf(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let kkt = check_kkt(&prob, &sol.q_star).unwrap();
        assert!(kkt.max() <= DEFAULT_TOL, "{kkt:?}");
    }

    #[test]
    fn stationarity_grows_linearly_around_interior_optimum() {
        // Pick w so the unconstrained optimum is strictly interior, then
        // perturb: residual must be exactly ||2R delta||.
        let prob = scalar_problem(-0.4, 0.4);
        let sol = solve_opf(&prob, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let delta = 1e-4;
        let q = DVector::from_element(1, sol.q_star[0] + delta);
        let kkt = check_kkt(&prob, &q).unwrap();
        assert_relative_eq!(kkt.stationarity, 2.0 * 0.1 * delta, max_relative = 1e-6);
    }

    #[test]
    fn unreachable_band_reports_infeasible() {
        let mut prob = scalar_problem(-0.05, 0.05);
        // Reachable voltage is 1.0 +- 0.005; demand at least 1.05.
        prob.v_min = DVector::from_element(1, 1.05);
        prob.v_max = DVector::from_element(1, 1.10);
        let sol = solve_opf(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        match sol.status {
            OpfStatus::Infeasible { bus, violation } => {
                assert_eq!(bus, 1);
                assert!(violation > 0.04, "violation {violation}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn solver_is_bitwise_deterministic() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let model = build_linear_model(&adm, &net).unwrap();
        let p = DVector::from_element(6, -0.05);
        let q_l = DVector::from_element(4, -0.02);
        let prob = assemble_opf(&model, &p, &q_l, &net).unwrap();
        let a = solve_opf(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let b = solve_opf(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(a.q_star, b.q_star);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.loss_star.to_bits(), b.loss_star.to_bits());
    }

    #[test]
    fn optimum_dominates_random_feasible_points() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let model = build_linear_model(&adm, &net).unwrap();
        let p = DVector::from_vec(vec![-0.04, -0.06, -0.05, -0.06, 0.02, -0.03]);
        let q_l = DVector::from_vec(vec![-0.02, -0.03, -0.02, -0.02]);
        let prob = assemble_opf(&model, &p, &q_l, &net).unwrap();
        let sol = solve_opf(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tested = 0;
        while tested < 1000 {
            let q = DVector::from_fn(prob.n_der(), |i, _| {
                rng.random_range(prob.q_min[i]..=prob.q_max[i])
            });
            if prob.violation(&q) > 0.0 {
                continue;
            }
            tested += 1;
            assert!(sol.loss_star <= prob.loss(&q) + 1e-12);
        }
    }

    #[test]
    fn tightening_tolerance_never_worsens_certificate() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let model = build_linear_model(&adm, &net).unwrap();
        let p = DVector::from_vec(vec![-0.05, -0.08, -0.06, -0.07, 0.01, -0.04]);
        let q_l = DVector::from_vec(vec![-0.03, -0.04, -0.02, -0.03]);
        let prob = assemble_opf(&model, &p, &q_l, &net).unwrap();
        let mut last = f64::INFINITY;
        for tol in [1e-6, 1e-8, 1e-10] {
            let sol = solve_opf(&prob, tol, DEFAULT_MAX_ITER).unwrap();
            assert_eq!(sol.status, OpfStatus::Optimal);
            let worst = sol.kkt.max();
            assert!(worst <= tol, "tol {tol}: residual {worst}");
            assert!(worst <= last + 1e-15);
            last = worst;
        }
    }

    #[test]
    fn solution_voltage_stays_inside_band_with_slack() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let model = build_linear_model(&adm, &net).unwrap();
        let p = DVector::from_vec(vec![-0.06, -0.09, -0.07, -0.08, 0.0, -0.05]);
        let q_l = DVector::from_vec(vec![-0.03, -0.05, -0.03, -0.04]);
        let prob = assemble_opf(&model, &p, &q_l, &net).unwrap();
        let sol = solve_opf(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        for j in 0..prob.n_bus() {
            assert!(sol.v_star[j] >= prob.v_min[j] - FEAS_TOL);
            assert!(sol.v_star[j] <= prob.v_max[j] + FEAS_TOL);
        }
        for i in 0..prob.n_der() {
            assert!(sol.q_star[i] >= prob.q_min[i] - 1e-12);
            assert!(sol.q_star[i] <= prob.q_max[i] + 1e-12);
        }
    }
}
