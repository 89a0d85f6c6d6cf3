//! Closed-loop stability certification.
//!
//! The incremental loop contracts when every eigenvalue of
//! `(1 - eps) I + eps * J_phi * X` stays strictly inside the unit circle.
//! With nonincreasing curves, `J_phi = -diag(|phi'|)` and `X` symmetric
//! positive definite, the product `diag(|phi'|) X` has real nonnegative
//! eigenvalues bounded by `||X|| * M`; that is what turns the slope budget
//! `M` into the step-size bound `eps < 2 / (1 + ||X|| M)`.
//!
//! `verify_slope_product_bound` checks the eigenvalue claim numerically on
//! a concrete instance through the symmetric similarity
//! `X^1/2 diag X^1/2`, then cross-checks against a general (non-symmetric)
//! eigensolve of the raw product. `assess_stability` packages the full
//! certificate for a feeder and a set of trained curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::epsilon_bound;
use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::nn::MonotoneNn;

/// Spectral norm of a symmetric matrix. Inputs that are symmetric only up
/// to rounding are symmetrized first.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.amax()
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Symmetric positive semidefinite square root. Eigenvalues below
/// `-1e-10 * ||m||` are rejected; small negative rounding residue is
/// clamped to zero.
pub fn sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("square root of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let floor = -1e-10 * eig.eigenvalues.amax().max(1.0);
    for &l in eig.eigenvalues.iter() {
        if l < floor {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive semidefinite: eigenvalue {l:.3e}"
            )));
        }
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeProductReport {
    /// Eigenvalues of diag(slopes) * X, ascending.
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub lambda_max: f64,
    pub x_norm: f64,
    /// Largest diagonal slope magnitude.
    pub m: f64,
    /// All eigenvalues real and nonnegative (within tolerance).
    pub psd_ok: bool,
    /// lambda_max <= x_norm * m (within tolerance).
    pub bound_ok: bool,
}

/// Check that `diag(slopes) * X` has real eigenvalues in
/// `[0, ||X|| * max(slopes)]`. `slopes` are the curve slope magnitudes,
/// all nonnegative; `x` must be symmetric positive definite.
pub fn verify_slope_product_bound(
    slopes: &DVector<f64>,
    x: &DMatrix<f64>,
    tol: f64,
) -> Result<SlopeProductReport> {
    let c = slopes.len();
    if x.nrows() != c || x.ncols() != c {
        return Err(Error::Dimension(format!(
            "{} slopes against a {}x{} sensitivity",
            c,
            x.nrows(),
            x.ncols()
        )));
    }
    let asym = (x - x.transpose()).amax();
    if asym > 1e-9 * x.amax().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "sensitivity is not symmetric: max asymmetry {asym:.3e}"
        )));
    }
    if slopes.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::InvalidInput("slope magnitudes must be nonnegative".into()));
    }

    // Similarity transform: diag * X has the same spectrum as the symmetric
    // PSD matrix X^1/2 diag X^1/2, which a symmetric eigensolver handles
    // without imaginary residue.
    let root = sqrt_spd(x)?;
    let sym = &root * DMatrix::from_diagonal(slopes) * &root;
    let mut eigenvalues: Vec<f64> =
        sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Cross-check on the raw, non-symmetric product.
    let product = DMatrix::from_diagonal(slopes) * x;
    let general = product.complex_eigenvalues();
    let max_imag = general.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let mut general_re: Vec<f64> = general.iter().map(|c| c.re).collect();
    general_re.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = eigenvalues.last().copied().unwrap_or(1.0).abs().max(1.0);
    let agree = eigenvalues
        .iter()
        .zip(&general_re)
        .all(|(a, b)| (a - b).abs() <= 1e-7 * scale)
        && max_imag <= 1e-7 * scale;
    if !agree {
        return Err(Error::InvalidInput(format!(
            "eigensolvers disagree on the slope product (max imaginary part {max_imag:.3e})"
        )));
    }

    let min_eigenvalue = eigenvalues.first().copied().unwrap_or(0.0);
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0);
    let x_norm = spectral_norm_sym(x);
    let m = slopes.amax();
    Ok(SlopeProductReport {
        psd_ok: min_eigenvalue >= -tol,
        bound_ok: lambda_max <= x_norm * m + tol,
        eigenvalues,
        min_eigenvalue,
        lambda_max,
        x_norm,
        m,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Spectral norm of the DER-block voltage sensitivity.
    pub x_norm: f64,
    /// Certified slope bound across all curves.
    pub slope_bound: f64,
    /// Largest provably contracting step size.
    pub epsilon_max: f64,
    /// Worst-case eigenvalue check at slopes pinned to the bound.
    pub slope_product: SlopeProductReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Whether the requested step size is strictly under the bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_ok: Option<bool>,
    /// Spectral radius of the worst-case closed-loop Jacobian at the
    /// requested step size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_case_radius: Option<f64>,
}

/// Full stability certificate for a feeder and its trained curves.
/// `epsilon` is the step size to judge; pass `None` to only compute the
/// bound.
pub fn assess_stability(
    curves: &[MonotoneNn],
    model: &LinearModel,
    epsilon: Option<f64>,
) -> Result<StabilityReport> {
    if curves.len() != model.n_der() {
        return Err(Error::Dimension(format!(
            "{} curves for {} DERs",
            curves.len(),
            model.n_der()
        )));
    }
    if curves.is_empty() {
        return Err(Error::InvalidInput("no curves to certify".into()));
    }
    let x = (&model.x_cc + model.x_cc.transpose()) * 0.5;
    let x_norm = spectral_norm_sym(&x);
    let slope_bound = curves.iter().map(|c| c.max_slope()).fold(0.0, f64::max);
    let epsilon_max = epsilon_bound(x_norm, slope_bound);

    let worst = DVector::from_fn(curves.len(), |j, _| curves[j].max_slope());
    let slope_product = verify_slope_product_bound(&worst, &x, 1e-10)?;

    let (epsilon_ok, worst_case_radius) = match epsilon {
        Some(eps) => {
            let j = DMatrix::identity(curves.len(), curves.len()) * (1.0 - eps)
                - eps * DMatrix::from_diagonal(&worst) * &x;
            (Some(eps > 0.0 && eps < epsilon_max), Some(spectral_radius(&j)))
        }
        None => (None, None),
    };

    Ok(StabilityReport {
        x_norm,
        slope_bound,
        epsilon_max,
        slope_product,
        epsilon,
        epsilon_ok,
        worst_case_radius,
    })
}
