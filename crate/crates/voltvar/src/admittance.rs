//! Bus admittance matrix assembly.
//!
//! For every branch between buses `m` and `n` with series impedance
//! `z = r + jx`, the series admittance `y = 1/z` enters the nodal matrix the
//! usual way: `-y` on the two off-diagonal slots, `+y` on both diagonals.
//! Charging susceptance is treated as a pi model, `j·b/2` added to each end
//! bus diagonal. With all shunts zero the result is a complex weighted
//! Laplacian, so every row sums to zero; shunts are exactly the deviation
//! from that property.
//!
//! The matrix is stored whole, `(N+1) x (N+1)` with the substation in slot 0,
//! and read through the block partition
//!
//! ```text
//!     Y = [ y00   y0^T ]
//!         [ y0    Ytil ]
//! ```
//!
//! where `Ytil` (interior buses only) is what the sensitivity model inverts.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::FeederNetwork;

pub type C64 = Complex<f64>;

#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    /// Full nodal matrix, substation included.
    pub y: DMatrix<C64>,
}

impl AdmittanceMatrix {
    pub fn n_interior(&self) -> usize {
        self.y.nrows() - 1
    }

    /// Substation self-admittance.
    pub fn y00(&self) -> C64 {
        self.y[(0, 0)]
    }

    /// Coupling column between the substation and the interior buses.
    pub fn y0(&self) -> DVector<C64> {
        let n = self.n_interior();
        DVector::from_fn(n, |i, _| self.y[(i + 1, 0)])
    }

    /// Interior-bus block `Ytil`.
    pub fn ytilde(&self) -> DMatrix<C64> {
        let n = self.n_interior();
        DMatrix::from_fn(n, n, |i, j| self.y[(i + 1, j + 1)])
    }
}

/// Assemble the nodal admittance matrix for a validated network.
///
/// Errors mirror `FeederNetwork::validate`: disconnected graphs and
/// degenerate branches are rejected here too, so the function is safe to call
/// on freshly parsed input.
pub fn build_admittance(network: &FeederNetwork) -> Result<AdmittanceMatrix> {
    network.validate()?;
    let n = network.n_interior();
    let mut y = DMatrix::<C64>::zeros(n + 1, n + 1);

    for line in &network.lines {
        let z = C64::new(line.r, line.x);
        if z.norm_sqr() == 0.0 {
            return Err(Error::InvalidInput(format!(
                "line {}-{} has zero impedance",
                line.from, line.to
            )));
        }
        let ys = z.inv();
        let (m, k) = (line.from, line.to);
        y[(m, k)] -= ys;
        y[(k, m)] -= ys;
        y[(m, m)] += ys;
        y[(k, k)] += ys;

        let half_shunt = C64::new(0.0, line.shunt_b / 2.0);
        y[(m, m)] += half_shunt;
        y[(k, k)] += half_shunt;
    }

    Ok(AdmittanceMatrix { y })
}
