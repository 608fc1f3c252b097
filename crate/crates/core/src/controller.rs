//! A synthesized feedback of either family, as stored in controller files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::NestedSatController;
use crate::simulation::{integrator_chain, linear_system, simulate, SimOptions, Trajectory};
use crate::skew::SkewController;
use crate::verification::DerivativeEvaluator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Controller {
    IntegratorChain(NestedSatController),
    Skew(SkewController),
}

impl Controller {
    pub fn dim(&self) -> usize {
        match self {
            Controller::IntegratorChain(c) => c.n,
            Controller::Skew(c) => c.n(),
        }
    }

    pub fn p(&self) -> u32 {
        match self {
            Controller::IntegratorChain(c) => c.p,
            Controller::Skew(c) => c.p(),
        }
    }

    /// `R_0..R_p` the controller was designed for.
    pub fn bounds(&self) -> &[f64] {
        match self {
            Controller::IntegratorChain(c) => &c.bounds,
            Controller::Skew(c) => &c.system.bounds,
        }
    }

    /// Panics on a dimension mismatch.
    pub fn feedback(&self, x: &[f64]) -> f64 {
        match self {
            Controller::IntegratorChain(c) => c.feedback(x),
            Controller::Skew(c) => c.feedback(x),
        }
    }

    /// Closed-loop run from `x0`.
    pub fn simulate(&self, x0: &[f64], opts: &SimOptions) -> Result<Trajectory> {
        if x0.len() != self.dim() {
            return Err(Error::Shape(format!(
                "initial condition has dimension {}, controller expects {}",
                x0.len(),
                self.dim()
            )));
        }
        match self {
            Controller::IntegratorChain(c) => simulate(integrator_chain, |x| c.feedback(x), x0, opts),
            Controller::Skew(c) => {
                let f = linear_system(&c.system.a, &c.system.b);
                simulate(f, |x| c.feedback(x), x0, opts)
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("cannot serialize controller: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("controller file: {e}")))
    }
}

impl DerivativeEvaluator for Controller {
    fn dim(&self) -> usize {
        Controller::dim(self)
    }
    fn max_order(&self) -> u32 {
        self.p()
    }
    fn u_derivatives(&self, x: &[f64], up_to: u32) -> Result<Vec<f64>> {
        match self {
            Controller::IntegratorChain(c) => c.u_derivatives(x, up_to),
            Controller::Skew(c) => c.u_derivatives(x, up_to),
        }
    }
    fn region_key(&self, x: &[f64]) -> Vec<usize> {
        match self {
            Controller::IntegratorChain(c) => c.region_key(x),
            Controller::Skew(c) => c.region_key(x),
        }
    }
}
