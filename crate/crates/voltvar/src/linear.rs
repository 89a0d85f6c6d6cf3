//! Linearized voltage and loss model of the feeder.
//!
//! Starting from the nodal equations `Y u = i` with the substation voltage
//! pinned to 1 p.u., eliminating the substation row leaves the interior
//! system `Ytil u_int = i_int - y0`, i.e.
//!
//! ```text
//!     u_int = Ztil i_int + u_hat,      Ztil = Ytil^-1,  u_hat = -Ztil y0
//! ```
//!
//! `u_hat` is the exact no-load voltage profile (flat 1 p.u. when the lines
//! carry no shunts). Expanding to first order around that point, with
//! injections `s = p + jq` and near-nominal voltage, gives the sensitivity
//! form used everywhere in this crate:
//!
//! ```text
//!     v  ~=  Rtil p + Xtil q + |u_hat|,     Rtil = Re(Ztil), Xtil = Im(Ztil)
//! ```
//!
//! and the companion quadratic loss surrogate
//!
//! ```text
//!     loss(p, q)  ~=  p^T Rtil p + q^T Rtil q
//! ```
//!
//! (resistance-weighted energies of the two injection vectors; no p-q cross
//! term at this order).
//!
//! # DER / load partition
//!
//! Interior buses split into the DER set C (ascending bus id, the crate-wide
//! ordering contract) and the load set L. Sub-blocks of `Rtil`/`Xtil` over
//! those index sets get the short names
//!
//! ```text
//!     R  = Rtil[C,C]   R_L  = Rtil[C,L]   R_LL = Rtil[L,L]
//!     X  = Xtil[C,C]   X_L  = Xtil[C,L]   X_LL = Xtil[L,L]
//! ```
//!
//! For a connected feeder with `r, x > 0` on every branch, `R` and `X` are
//! symmetric positive definite, which is what makes the dispatch problem in
//! `opf` strictly convex and the stability analysis in `stability` work.
//!
//! Holding the exogenous injections `(p, q_L)` fixed and letting only the
//! DER reactive vector `q_C` move restricts both maps to affine/quadratic
//! functions of `q_C`:
//!
//! ```text
//!     v(q_C)    = S q_C + v_hat,             S = Xtil[:, C]
//!     loss(q_C) = q_C^T R q_C + q_C^T w + l_hat,   w = 2 R_L q_L
//! ```
//!
//! with `v_hat` the voltage at `q_C = 0` and `l_hat` the matching constant.

use nalgebra::{Complex, DMatrix, DVector};

use crate::admittance::{AdmittanceMatrix, C64};
use crate::error::{Error, Result};
use crate::network::FeederNetwork;

/// Sensitivity matrices, no-load voltage and the C/L partition blocks.
///
/// All vectors indexed by interior bus follow natural bus order (slot 0 is
/// bus 1); all C-dimensional quantities follow ascending DER bus id.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub r_tilde: DMatrix<f64>,
    pub x_tilde: DMatrix<f64>,
    /// Complex no-load voltage of the interior buses.
    pub u_hat: DVector<C64>,
    /// Magnitudes |u_hat|; the constant term of the voltage map.
    pub u_hat_mag: DVector<f64>,
    /// Interior indices (bus id - 1) of the DER buses, ascending.
    pub der_idx: Vec<usize>,
    /// Interior indices of the remaining buses, ascending.
    pub load_idx: Vec<usize>,
    pub r_cc: DMatrix<f64>,
    pub r_cl: DMatrix<f64>,
    pub r_ll: DMatrix<f64>,
    pub x_cc: DMatrix<f64>,
    pub x_cl: DMatrix<f64>,
    pub x_ll: DMatrix<f64>,
}

/// Exogenous and controlled injections, split the way the model consumes
/// them: `p` over all interior buses, `q_l` over load buses, `q_c` over DER
/// buses (ascending bus id).
#[derive(Debug, Clone)]
pub struct InjectionState {
    pub p: DVector<f64>,
    pub q_l: DVector<f64>,
    pub q_c: DVector<f64>,
}

impl InjectionState {
    pub fn new(p: DVector<f64>, q_l: DVector<f64>, q_c: DVector<f64>) -> Self {
        InjectionState { p, q_l, q_c }
    }

    pub fn zeros(model: &LinearModel) -> Self {
        InjectionState {
            p: DVector::zeros(model.n_interior()),
            q_l: DVector::zeros(model.load_idx.len()),
            q_c: DVector::zeros(model.der_idx.len()),
        }
    }
}

impl LinearModel {
    pub fn n_interior(&self) -> usize {
        self.r_tilde.nrows()
    }

    pub fn n_der(&self) -> usize {
        self.der_idx.len()
    }

    /// Scatter `(q_c, q_l)` into a full interior reactive vector.
    pub fn assemble_q(&self, q_c: &DVector<f64>, q_l: &DVector<f64>) -> Result<DVector<f64>> {
        if q_c.len() != self.der_idx.len() || q_l.len() != self.load_idx.len() {
            return Err(Error::Dimension(format!(
                "assemble_q: got q_c len {} (want {}), q_l len {} (want {})",
                q_c.len(),
                self.der_idx.len(),
                q_l.len(),
                self.load_idx.len()
            )));
        }
        let mut q = DVector::zeros(self.n_interior());
        for (slot, &i) in self.der_idx.iter().enumerate() {
            q[i] = q_c[slot];
        }
        for (slot, &i) in self.load_idx.iter().enumerate() {
            q[i] = q_l[slot];
        }
        Ok(q)
    }

    /// Voltage sensitivity of every interior bus to the DER vector:
    /// the DER columns of `Xtil`.
    pub fn der_columns(&self) -> DMatrix<f64> {
        self.x_tilde.select_columns(&self.der_idx)
    }
}

/// Invert the interior admittance block and extract the partition.
///
/// Fails with a `Singular` error (carrying a pivot-ratio diagnostic) if the
/// LU factorization breaks down or the inverse fails its residual check,
/// which on a validated network indicates pathological impedances rather
/// than topology problems.
pub fn build_linear_model(adm: &AdmittanceMatrix, network: &FeederNetwork) -> Result<LinearModel> {
    let n = adm.n_interior();
    if n != network.n_interior() {
        return Err(Error::Dimension(format!(
            "admittance has {n} interior buses, network has {}",
            network.n_interior()
        )));
    }
    let ytilde = adm.ytilde();
    let lu = ytilde.clone().lu();
    let diag: Vec<f64> = (0..n).map(|i| lu.u()[(i, i)].norm()).collect();
    let pivot_min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let pivot_max = diag.iter().cloned().fold(0.0, f64::max);
    let z_tilde = match lu.try_inverse() {
        Some(z) => z,
        None => {
            return Err(Error::Singular {
                context: "interior admittance block".into(),
                diagnostic: format!("LU pivot range [{pivot_min:.3e}, {pivot_max:.3e}]"),
            })
        }
    };

    // Cheap a-posteriori sanity check on the inverse.
    let residual = (&z_tilde * &ytilde - DMatrix::<C64>::identity(n, n))
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    if !(residual < 1e-6) {
        return Err(Error::Singular {
            context: "interior admittance block".into(),
            diagnostic: format!(
                "inverse residual {residual:.3e}, pivot range [{pivot_min:.3e}, {pivot_max:.3e}]"
            ),
        });
    }

    // No-load voltage: substation held at 1 p.u., no interior current.
    let y0 = adm.y0();
    let u_hat = -(&z_tilde * y0);
    let u_hat_mag = u_hat.map(Complex::norm);

    let r_tilde = z_tilde.map(|c| c.re);
    let x_tilde = z_tilde.map(|c| c.im);

    let der_idx: Vec<usize> = network.der_buses().iter().map(|b| b - 1).collect();
    let load_idx: Vec<usize> = network.load_buses().iter().map(|b| b - 1).collect();

    let block = |m: &DMatrix<f64>, rows: &[usize], cols: &[usize]| {
        m.select_rows(rows).select_columns(cols)
    };

    Ok(LinearModel {
        r_cc: block(&r_tilde, &der_idx, &der_idx),
        r_cl: block(&r_tilde, &der_idx, &load_idx),
        r_ll: block(&r_tilde, &load_idx, &load_idx),
        x_cc: block(&x_tilde, &der_idx, &der_idx),
        x_cl: block(&x_tilde, &der_idx, &load_idx),
        x_ll: block(&x_tilde, &load_idx, &load_idx),
        r_tilde,
        x_tilde,
        u_hat,
        u_hat_mag,
        der_idx,
        load_idx,
    })
}

/// First-order voltage magnitudes `v = Rtil p + Xtil q + |u_hat|` for the
/// assembled injection state.
pub fn linearized_voltage(model: &LinearModel, state: &InjectionState) -> Result<DVector<f64>> {
    if state.p.len() != model.n_interior() {
        return Err(Error::Dimension(format!(
            "p has length {}, model has {} interior buses",
            state.p.len(),
            model.n_interior()
        )));
    }
    let q = model.assemble_q(&state.q_c, &state.q_l)?;
    Ok(&model.r_tilde * &state.p + &model.x_tilde * q + &model.u_hat_mag)
}

/// Voltage at `q_C = 0` for fixed exogenous `(p, q_L)`: the affine offset of
/// the restricted voltage map.
pub fn voltage_offset(model: &LinearModel, p: &DVector<f64>, q_l: &DVector<f64>) -> Result<DVector<f64>> {
    if p.len() != model.n_interior() || q_l.len() != model.load_idx.len() {
        return Err(Error::Dimension(format!(
            "voltage_offset: p len {} (want {}), q_l len {} (want {})",
            p.len(),
            model.n_interior(),
            q_l.len(),
            model.load_idx.len()
        )));
    }
    let xl = model.x_tilde.select_columns(&model.load_idx);
    Ok(&model.r_tilde * p + xl * q_l + &model.u_hat_mag)
}

/// All-bus voltage as a function of the DER vector alone.
pub fn restricted_voltage(
    model: &LinearModel,
    q_c: &DVector<f64>,
    p: &DVector<f64>,
    q_l: &DVector<f64>,
) -> Result<DVector<f64>> {
    if q_c.len() != model.der_idx.len() {
        return Err(Error::Dimension(format!(
            "q_c has length {}, model has {} DERs",
            q_c.len(),
            model.der_idx.len()
        )));
    }
    Ok(model.der_columns() * q_c + voltage_offset(model, p, q_l)?)
}

/// Linear and constant coefficients of the restricted loss quadratic:
/// `loss(q_C) = q_C^T R q_C + q_C^T w + l_hat`.
pub fn loss_coefficients(
    model: &LinearModel,
    p: &DVector<f64>,
    q_l: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    if p.len() != model.n_interior() || q_l.len() != model.load_idx.len() {
        return Err(Error::Dimension("loss_coefficients: injection lengths".into()));
    }
    let w = 2.0 * &model.r_cl * q_l;
    let l_hat = (q_l.transpose() * &model.r_ll * q_l)[(0, 0)]
        + (p.transpose() * &model.r_tilde * p)[(0, 0)];
    Ok((w, l_hat))
}

/// Loss surrogate as a function of the DER vector alone.
pub fn restricted_loss(
    model: &LinearModel,
    q_c: &DVector<f64>,
    p: &DVector<f64>,
    q_l: &DVector<f64>,
) -> Result<f64> {
    if q_c.len() != model.der_idx.len() {
        return Err(Error::Dimension("restricted_loss: q_c length".into()));
    }
    let (w, l_hat) = loss_coefficients(model, p, q_l)?;
    Ok((q_c.transpose() * &model.r_cc * q_c)[(0, 0)] + q_c.dot(&w) + l_hat)
}

/// Full-form loss surrogate on assembled vectors.
pub fn full_loss(model: &LinearModel, p: &DVector<f64>, q: &DVector<f64>) -> f64 {
    (q.transpose() * &model.r_tilde * q)[(0, 0)] + (p.transpose() * &model.r_tilde * p)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admittance::build_admittance;
    use crate::fixtures;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_bus_model() -> LinearModel {
        let net = fixtures::two_bus();
        let adm = build_admittance(&net).unwrap();
        build_linear_model(&adm, &net).unwrap()
    }

    #[test]
    fn two_bus_scalar_inverse() {
        let m = two_bus_model();
        // Ytil = 5 - j5  =>  Ztil = 0.1 + j0.1
        assert_relative_eq!(m.r_tilde[(0, 0)], 0.1, max_relative = 1e-13);
        assert_relative_eq!(m.x_tilde[(0, 0)], 0.1, max_relative = 1e-13);
        // Open-circuit voltage of a shuntless feeder is flat 1 p.u.
        assert_relative_eq!(m.u_hat_mag[0], 1.0, max_relative = 1e-13);
        assert!(m.u_hat[0].im.abs() < 1e-14);
    }

    #[test]
    fn two_bus_voltage_evaluation() {
        let m = two_bus_model();
        let state = InjectionState::new(
            DVector::from_vec(vec![0.1]),
            DVector::zeros(0),
            DVector::from_vec(vec![0.05]),
        );
        let v = linearized_voltage(&m, &state).unwrap();
        // 0.1*0.1 + 0.1*0.05 + 1.0
        assert_relative_eq!(v[0], 1.015, max_relative = 1e-12);
    }

    #[test]
    fn zero_injection_voltage_is_no_load() {
        let m = two_bus_model();
        let v = linearized_voltage(&m, &InjectionState::zeros(&m)).unwrap();
        assert_eq!(v.len(), 1);
        assert_relative_eq!(v[0], m.u_hat_mag[0], max_relative = 1e-15);
    }

    #[test]
    fn superposition_in_p() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let m = build_linear_model(&adm, &net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = m.n_interior();
        let rand_vec = |rng: &mut ChaCha8Rng, len: usize| {
            DVector::from_fn(len, |_, _| rng.random_range(-0.1..0.1))
        };
        let p1 = rand_vec(&mut rng, n);
        let p2 = rand_vec(&mut rng, n);
        let q_l = rand_vec(&mut rng, m.load_idx.len());
        let q_c = rand_vec(&mut rng, m.der_idx.len());
        let v12 = linearized_voltage(&m, &InjectionState::new(&p1 + &p2, q_l.clone(), q_c.clone())).unwrap();
        let v2 = linearized_voltage(&m, &InjectionState::new(p2, q_l, q_c)).unwrap();
        let direct = &m.r_tilde * &p1;
        for i in 0..n {
            assert_relative_eq!(v12[i] - v2[i], direct[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn scalar_loss_all_buses_der() {
        // Single interior bus hosting the DER: restricted loss reduces to
        // q^2 R + p^2 R with R = 0.1.
        let m = two_bus_model();
        let l = restricted_loss(
            &m,
            &DVector::from_vec(vec![0.05]),
            &DVector::from_vec(vec![0.1]),
            &DVector::zeros(0),
        )
        .unwrap();
        assert_relative_eq!(l, 0.00125, max_relative = 1e-12);
    }

    #[test]
    fn restriction_agrees_with_full_forms() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let m = build_linear_model(&adm, &net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let p = DVector::from_fn(m.n_interior(), |_, _| rng.random_range(-0.1..0.1));
            let q_l = DVector::from_fn(m.load_idx.len(), |_, _| rng.random_range(-0.1..0.1));
            let q_c = DVector::from_fn(m.der_idx.len(), |_, _| rng.random_range(-0.4..0.4));

            let v_restricted = restricted_voltage(&m, &q_c, &p, &q_l).unwrap();
            let state = InjectionState::new(p.clone(), q_l.clone(), q_c.clone());
            let v_full = linearized_voltage(&m, &state).unwrap();
            for i in 0..m.n_interior() {
                assert_relative_eq!(v_restricted[i], v_full[i], epsilon = 1e-12);
            }

            let l_restricted = restricted_loss(&m, &q_c, &p, &q_l).unwrap();
            let q = m.assemble_q(&q_c, &q_l).unwrap();
            let l_full = full_loss(&m, &p, &q);
            assert_relative_eq!(l_restricted, l_full, epsilon = 1e-12);
        }
    }

    #[test]
    fn restricted_voltage_at_zero_is_offset() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let m = build_linear_model(&adm, &net).unwrap();
        let p = DVector::from_element(m.n_interior(), -0.05);
        let q_l = DVector::from_element(m.load_idx.len(), -0.02);
        let v = restricted_voltage(&m, &DVector::zeros(m.n_der()), &p, &q_l).unwrap();
        let offset = voltage_offset(&m, &p, &q_l).unwrap();
        for i in 0..m.n_interior() {
            assert_relative_eq!(v[i], offset[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn partition_blocks_reassemble_exactly() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let m = build_linear_model(&adm, &net).unwrap();
        for (ci, &i) in m.der_idx.iter().enumerate() {
            for (cj, &j) in m.der_idx.iter().enumerate() {
                assert_eq!(m.r_cc[(ci, cj)], m.r_tilde[(i, j)]);
                assert_eq!(m.x_cc[(ci, cj)], m.x_tilde[(i, j)]);
            }
            for (lj, &j) in m.load_idx.iter().enumerate() {
                assert_eq!(m.r_cl[(ci, lj)], m.r_tilde[(i, j)]);
                assert_eq!(m.x_cl[(ci, lj)], m.x_tilde[(i, j)]);
            }
        }
        for (li, &i) in m.load_idx.iter().enumerate() {
            for (lj, &j) in m.load_idx.iter().enumerate() {
                assert_eq!(m.r_ll[(li, lj)], m.r_tilde[(i, j)]);
                assert_eq!(m.x_ll[(li, lj)], m.x_tilde[(i, j)]);
            }
        }
    }

    #[test]
    fn degenerate_partition_all_buses_der() {
        let mut net = fixtures::six_bus();
        net.ders = (1..=net.n_interior())
            .map(|bus| crate::network::Der { bus, q_min: -0.1, q_max: 0.1 })
            .collect();
        let adm = build_admittance(&net).unwrap();
        let m = build_linear_model(&adm, &net).unwrap();
        assert_eq!(m.load_idx.len(), 0);
        assert_eq!(m.r_cc, m.r_tilde);
        assert_eq!(m.r_ll.nrows(), 0);
    }

    #[test]
    fn der_blocks_are_positive_definite() {
        let net = fixtures::six_bus();
        let adm = build_admittance(&net).unwrap();
        let m = build_linear_model(&adm, &net).unwrap();
        for block in [&m.r_cc, &m.x_cc] {
            let sym = (block + block.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "min eigenvalue {min}");
        }
    }
}
