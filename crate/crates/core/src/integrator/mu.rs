use serde::{Deserialize, Serialize};

use super::ChainSpec;
use crate::error::{invalid, Error, Result};
use crate::saturation::SaturationSpec;

/// Safety factor applied to each strict inequality of the default level rule.
pub const DEFAULT_LEVEL_FACTOR: f64 = 0.8;

/// The inner saturation levels `mu_1 .. mu_{n-1}`, all with unit slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuFamily {
    pub specs: Vec<SaturationSpec>,
    pub mu_max: Vec<f64>,
    pub l_mu: Vec<f64>,
    pub s_mu: Vec<f64>,
    /// `R_0 L_{sigma_n} alpha_{sigma_n} / sigma_n^max`; the outer level has slope `alpha_tilde / lambda`.
    pub alpha_tilde: f64,
}

impl MuFamily {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// `mu_i^max` with the convention `mu_0^max = 0`; `i` is 1-based.
    pub fn max_of(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.mu_max[i - 1]
        }
    }
}

/// `L_{mu_i}` giving `mu_i` unit slope.
fn unit_slope_l(sigma: &SaturationSpec, mu_max: f64) -> f64 {
    mu_max * sigma.l() * sigma.alpha() / sigma.sigma_max()
}

/// Picks `mu_i^max` for `i = 1..n-1` (default rule or explicit `overrides`,
/// listed from `mu_1` upwards) and builds the scaled saturations.
pub fn choose_mu_families(spec: &ChainSpec, overrides: Option<&[f64]>) -> Result<MuFamily> {
    let n = spec.n;
    let m = n - 1;
    if let Some(o) = overrides {
        if o.len() != m {
            return Err(invalid(format!("expected {m} mu_max overrides, got {}", o.len())));
        }
    }
    let mut mu_max = vec![0.0; m];
    let mut l_mu = vec![0.0; m];
    for idx in (0..m).rev() {
        // idx is 0-based; level i = idx + 1
        let i = idx + 1;
        let limit = if i == m { 0.5 } else { l_mu[idx + 1] / 2.0 };
        let value = match overrides {
            Some(o) => o[idx],
            None => DEFAULT_LEVEL_FACTOR * limit,
        };
        if !(value > 0.0 && value < limit) {
            return Err(Error::Infeasible(format!(
                "mu_{i}^max = {value} must lie in (0, {limit}) ({})",
                if i == m { "mu_{n-1}^max < 1/2".to_string() } else { format!("mu_{i}^max < L_mu_{}/2", i + 1) }
            )));
        }
        mu_max[idx] = value;
        l_mu[idx] = unit_slope_l(&spec.sigmas[idx], value);
    }
    let specs = (0..m)
        .map(|idx| spec.sigmas[idx].scale_mu(mu_max[idx], l_mu[idx]))
        .collect::<Result<Vec<_>>>()?;
    let s_mu = specs.iter().map(|s| s.s()).collect();
    let sigma_n = &spec.sigmas[n - 1];
    Ok(MuFamily {
        specs,
        mu_max,
        l_mu,
        s_mu,
        alpha_tilde: spec.bounds[0] * sigma_n.l() * sigma_n.alpha() / sigma_n.sigma_max(),
    })
}

/// Outer level `mu_n(s) = R_0 sigma_n(s L_{sigma_n} / lambda) / sigma_n^max`.
pub fn outer_level(spec: &ChainSpec, lambda: f64) -> Result<SaturationSpec> {
    spec.sigmas[spec.n - 1].scale_mu(spec.bounds[0], lambda)
}
