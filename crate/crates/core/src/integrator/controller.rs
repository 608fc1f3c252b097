use serde::{Deserialize, Serialize};

use super::bounds::derivative_bound_table;
use super::mu::{choose_mu_families, outer_level, MuFamily};
use super::{coordinate_change, select_lambda, ChainSpec};
use crate::combinatorics::faa_di_bruno;
use crate::error::{invalid, Result};
use crate::saturation::SaturationSpec;

/// Optional replacements for the automatic choices made by [`synthesize`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOverrides {
    /// `mu_1^max .. mu_{n-1}^max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

/// `nu(x) = -a_n sigma_n(k_n^T x + a_{n-1} sigma_{n-1}(... + a_1 sigma_1(k_1^T x)))`.
///
/// Equivalently `nu(x) = -mu_n(z_n)` with `y = H x`, `z_1 = y_1` and
/// `z_i = y_i + mu_{i-1}(z_{i-1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSatController {
    pub n: usize,
    pub p: u32,
    pub bounds: Vec<f64>,
    pub sigmas: Vec<SaturationSpec>,
    /// `k[i-1] = k_i`
    pub k: Vec<Vec<f64>>,
    /// `a[i-1] = a_i`
    pub a: Vec<f64>,
    pub lambda: f64,
    /// Rows of `H`; `h[i-1] = h_i` so that `y_i = h_i^T x`.
    pub h: Vec<Vec<f64>>,
    pub mu: MuFamily,
    pub mu_n: SaturationSpec,
    pub alpha_tilde: f64,
    /// Bounds on `sup |U^(j)|`, `j = 1..p`, from the recursion at `lambda`.
    pub certified: Vec<f64>,
}

/// Assembles the controller for `spec`.
///
/// Without a `lambda` override the smallest certifying `lambda` is used.
pub fn synthesize(spec: &ChainSpec, overrides: &SynthesisOverrides) -> Result<NestedSatController> {
    spec.validate()?;
    let n = spec.n;
    let mu = choose_mu_families(spec, overrides.mu_max.as_deref())?;
    let lambda = match overrides.lambda {
        Some(l) if !(l >= 1.0 && l.is_finite()) => return Err(invalid(format!("lambda override {l} must be >= 1"))),
        Some(l) => l,
        None => select_lambda(spec, &mu)?,
    };
    let table = derivative_bound_table(spec, &mu, lambda)?;
    let mu_n = outer_level(spec, lambda)?;
    let hm = coordinate_change(n, mu.alpha_tilde, lambda)?;
    let h: Vec<Vec<f64>> = (0..n).map(|i| hm.row(i).iter().copied().collect()).collect();

    // L_{mu_i} for i = 1..n with L_{mu_n} = lambda
    let l_mu = |i: usize| if i == n { lambda } else { mu.l_mu[i - 1] };
    let k = (1..=n)
        .map(|i| {
            let gain = spec.sigmas[i - 1].l() / l_mu(i);
            h[i - 1].iter().map(|v| gain * v).collect()
        })
        .collect();
    let a = (1..=n)
        .map(|i| {
            if i == n {
                spec.bounds[0] / spec.sigmas[n - 1].sigma_max()
            } else {
                spec.sigmas[i].l() * mu.mu_max[i - 1] / (l_mu(i + 1) * spec.sigmas[i - 1].sigma_max())
            }
        })
        .collect();

    Ok(NestedSatController {
        n,
        p: spec.p,
        bounds: spec.bounds.clone(),
        sigmas: spec.sigmas.clone(),
        k,
        a,
        lambda,
        h,
        alpha_tilde: mu.alpha_tilde,
        mu,
        mu_n,
        certified: table.rate_bounds,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl NestedSatController {
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(invalid(format!("state has dimension {}, controller expects {}", x.len(), self.n)));
        }
        Ok(())
    }

    /// Saturation `mu_i`, `i = 1..n`.
    pub fn level(&self, i: usize) -> &SaturationSpec {
        if i == self.n {
            &self.mu_n
        } else {
            &self.mu.specs[i - 1]
        }
    }

    /// `L_{mu_i}`, with `L_{mu_n} = lambda`.
    pub fn level_l(&self, i: usize) -> f64 {
        if i == self.n {
            self.lambda
        } else {
            self.mu.l_mu[i - 1]
        }
    }

    pub fn to_y(&self, x: &[f64]) -> Vec<f64> {
        self.h.iter().map(|row| dot(row, x)).collect()
    }

    fn z_chain(&self, y: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        z[0] = y[0];
        for i in 1..self.n {
            z[i] = y[i] + self.mu.specs[i - 1].value(z[i - 1]);
        }
        z
    }

    /// `Upsilon(y) = -mu_n(z_n)`.
    pub fn upsilon(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y)?;
        Ok(-self.mu_n.value(self.z_chain(y)[self.n - 1]))
    }

    /// `Upsilon(H x)`; panics on a dimension mismatch.
    pub fn feedback(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n, "state dimension");
        -self.mu_n.value(self.z_chain(&self.to_y(x))[self.n - 1])
    }

    /// The nested `a_i`, `k_i` expression.
    pub fn eval_nested_feedback(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut inner = 0.0;
        for i in 0..self.n {
            inner = self.a[i] * self.sigmas[i].value(dot(&self.k[i], x) + inner);
        }
        Ok(-inner)
    }

    /// `-(alpha_tilde / lambda) (y_1 + ... + y_n)`, the feedback once every level is unsaturated.
    pub fn linear_law(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(-self.alpha_tilde / self.lambda * self.to_y(x).iter().sum::<f64>())
    }

    /// Thresholds for entry-time detection: level `i` (1-based) watches
    /// `y_{n-i+1}` against `L_{mu_{n-i+1}} / 2`. Returns `(coordinate index, threshold)`.
    pub fn entry_thresholds(&self) -> Vec<(usize, f64)> {
        (1..=self.n).map(|i| (self.n - i, self.level_l(self.n - i + 1) / 2.0)).collect()
    }

    /// `U^(0..=up_to)` along the closed loop through state `x`.
    pub fn chain_u_derivatives(&self, x: &[f64], up_to: u32) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if up_to > self.p {
            return Err(invalid(format!("derivative order {up_to} exceeds p = {}", self.p)));
        }
        let n = self.n;
        let m_max = up_to as usize;
        let c = self.alpha_tilde / self.lambda;
        let y0 = self.to_y(x);
        let z0 = self.z_chain(&y0);

        // sat_d[i][a-1] = mu_{i+1}^(a)(z_{i+1})
        let sat_d: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut out = vec![0.0; m_max];
                self.level(i + 1).derivatives_into(z0[i], &mut out);
                out
            })
            .collect();

        let mut u = vec![0.0; m_max + 1];
        u[0] = -self.mu_n.value(z0[n - 1]);
        // yd[m][i], zd[m][i] for m >= 1
        let mut yd = vec![y0];
        let mut zd: Vec<Vec<f64>> = vec![z0];
        let mut inner = vec![0.0; m_max];
        for m in 1..=m_max {
            let prev = &yd[m - 1];
            let mut ym = vec![0.0; n];
            let mut tail = 0.0;
            for i in (0..n).rev() {
                ym[i] = c * tail + u[m - 1];
                tail += prev[i];
            }
            let mut zm = vec![0.0; n];
            zm[0] = ym[0];
            for i in 1..n {
                for (l, slot) in inner[..m - 1].iter_mut().enumerate() {
                    *slot = zd[l + 1][i - 1];
                }
                inner[m - 1] = zm[i - 1];
                zm[i] = ym[i] + faa_di_bruno(m as u32, &sat_d[i - 1][..m], &inner[..m])?;
            }
            for (l, slot) in inner[..m - 1].iter_mut().enumerate() {
                *slot = zd[l + 1][n - 1];
            }
            inner[m - 1] = zm[n - 1];
            u[m] = -faa_di_bruno(m as u32, &sat_d[n - 1][..m], &inner[..m])?;
            yd.push(ym);
            zd.push(zm);
        }
        Ok(u)
    }
}
