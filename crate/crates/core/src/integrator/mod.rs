//! Nested-saturation stabilizers for the integrator chain `x_i' = x_{i+1}`, `x_n' = u`.

mod bounds;
mod controller;
mod mu;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::saturation::SaturationSpec;

pub use bounds::{
    derivative_bound_polynomials, derivative_bound_table, select_lambda, BoundAux, BoundPolynomials, BoundTable,
    LambdaPoly, LAMBDA_TOLERANCE,
};
pub use controller::{synthesize, NestedSatController, SynthesisOverrides};
pub use mu::{choose_mu_families, outer_level, MuFamily, DEFAULT_LEVEL_FACTOR};

/// Problem data: chain length, derivative order, bounds `R_0..R_p` and one saturation per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n: usize,
    pub p: u32,
    pub bounds: Vec<f64>,
    pub sigmas: Vec<SaturationSpec>,
}

impl ChainSpec {
    pub fn new(n: usize, p: u32, bounds: Vec<f64>, sigmas: Vec<SaturationSpec>) -> Result<Self> {
        let spec = ChainSpec { n, p, bounds, sigmas };
        spec.validate()?;
        Ok(spec)
    }

    /// Same saturation on every level.
    pub fn uniform(n: usize, p: u32, bounds: Vec<f64>, sigma: SaturationSpec) -> Result<Self> {
        Self::new(n, p, bounds, vec![sigma; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("chain length n must be at least 1"));
        }
        if self.bounds.len() != self.p as usize + 1 {
            return Err(invalid(format!(
                "expected {} bounds R_0..R_{}, got {}",
                self.p + 1,
                self.p,
                self.bounds.len()
            )));
        }
        if let Some((j, r)) = self.bounds.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(invalid(format!("R_{j} = {r} must be positive")));
        }
        if self.sigmas.len() != self.n {
            return Err(invalid(format!("expected {} saturations, got {}", self.n, self.sigmas.len())));
        }
        for (i, s) in self.sigmas.iter().enumerate() {
            if s.p() < self.p {
                return Err(invalid(format!("sigma_{} is only C^{}, need C^{}", i + 1, s.p(), self.p)));
            }
            let report = s.membership(1e-9);
            if !report.passes() {
                return Err(invalid(format!("sigma_{} fails S(p) membership: {report:?}", i + 1)));
            }
        }
        Ok(())
    }
}

/// `H` with `y = H x`, row `n - i` holding `C(i, k) (alpha_tilde / lambda)^k` at column `n - k`.
pub fn coordinate_change(n: usize, alpha_tilde: f64, lambda: f64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(invalid("coordinate change needs n >= 1"));
    }
    if !(lambda >= 1.0) {
        return Err(invalid(format!("lambda must be >= 1, got {lambda}")));
    }
    let c = alpha_tilde / lambda;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut binom = 1.0;
        for k in 0..=i {
            h[(n - 1 - i, n - 1 - k)] = binom * c.powi(k as i32);
            binom = binom * (i - k) as f64 / (k + 1) as f64;
        }
    }
    Ok(h)
}
