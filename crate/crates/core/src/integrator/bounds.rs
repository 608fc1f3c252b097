//! Recursive derivative bounds for the nested-saturation control signal.
//!
//! Every entry of the `Y`, `Z` and `G` tables is a polynomial in `1/lambda`
//! with non-negative coefficients, so the tables are built once symbolically
//! and evaluated at any `lambda`.

use serde::{Deserialize, Serialize};

use super::mu::MuFamily;
use super::ChainSpec;
use crate::combinatorics::{bell_polynomial_in, BellScalar};
use crate::error::{invalid, Result};

/// Polynomial in `l = 1/lambda`, ascending coefficients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LambdaPoly(pub Vec<f64>);

impl LambdaPoly {
    pub fn constant(c: f64) -> Self {
        LambdaPoly(vec![c])
    }

    /// `c * l^k`
    pub fn monomial(c: f64, k: usize) -> Self {
        let mut v = vec![0.0; k + 1];
        v[k] = c;
        LambdaPoly(v)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    /// Coefficient of `l^k` (zero past the degree).
    pub fn coeff(&self, k: usize) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let l = 1.0 / lambda;
        self.0.iter().rev().fold(0.0, |acc, &c| acc * l + c)
    }
}

impl BellScalar for LambdaPoly {
    fn zero() -> Self {
        LambdaPoly(Vec::new())
    }
    fn one() -> Self {
        LambdaPoly(vec![1.0])
    }
    fn add(&self, other: &Self) -> Self {
        let n = self.0.len().max(other.0.len());
        LambdaPoly((0..n).map(|i| self.coeff(i) + other.coeff(i)).collect())
    }
    fn mul(&self, other: &Self) -> Self {
        if self.0.is_empty() || other.0.is_empty() {
            return Self::zero();
        }
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        LambdaPoly(out)
    }
    fn scale(&self, c: f64) -> Self {
        LambdaPoly(self.0.iter().map(|x| x * c).collect())
    }
}

/// Constants feeding the recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundAux {
    /// `b_{mu_i}` for `i = 1..n-1`.
    pub b_mu: Vec<f64>,
    pub delta: f64,
    pub b_lower: f64,
    pub b_upper: f64,
    /// `sup |sigma_n^(q)|`, `q = 1..p`.
    pub sigma_n_sup: Vec<f64>,
    /// `mu_tilde_{n,q} = R_0 sup|sigma_n^(q)| L_{sigma_n}^q / sigma_n^max`, so that
    /// `sup|mu_n^(q)| = mu_tilde_{n,q} / lambda^q`.
    pub mu_tilde_n: Vec<f64>,
    /// `mu_bar[i-1][a-1] = sup |mu_i^(a)|` for `i = 1..n-1`, `a = 1..p`.
    pub mu_bar: Vec<Vec<f64>>,
}

/// `Y`, `Z`, `G` as polynomials in `1/lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPolynomials {
    pub n: usize,
    pub p: u32,
    /// `y[i-1][j-1] = Y_{i,j}`
    pub y: Vec<Vec<LambdaPoly>>,
    /// `z[i-1][j-1] = Z_{i,j}`
    pub z: Vec<Vec<LambdaPoly>>,
    /// `g[q-1][j-1] = G_{q,j}`, empty polynomial for `q > j`
    pub g: Vec<Vec<LambdaPoly>>,
    pub aux: BoundAux,
}

/// The tables at a fixed `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub lambda: f64,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    /// `sup |mu_n^(q)|` at this lambda.
    pub mu_bar_n: Vec<f64>,
    /// Certified `sup |U^(j)|`, `j = 1..p`.
    pub rate_bounds: Vec<f64>,
    pub aux: BoundAux,
}

impl BoundPolynomials {
    /// `sum_q G_{q,j} mu_tilde_{n,q} l^q` for `1 <= j <= p`.
    pub fn rate_bound(&self, j: u32) -> Result<LambdaPoly> {
        if j == 0 || j > self.p {
            return Err(invalid(format!("rate bound order must be in 1..={}, got {j}", self.p)));
        }
        let j = j as usize;
        let mut acc = LambdaPoly::zero();
        for q in 1..=j {
            let term = self.g[q - 1][j - 1].mul(&LambdaPoly::monomial(self.aux.mu_tilde_n[q - 1], q));
            acc = acc.add(&term);
        }
        Ok(acc)
    }

    pub fn at(&self, lambda: f64) -> BoundTable {
        let ev = |m: &Vec<Vec<LambdaPoly>>| -> Vec<Vec<f64>> {
            m.iter().map(|row| row.iter().map(|pl| pl.eval(lambda)).collect()).collect()
        };
        BoundTable {
            lambda,
            y: ev(&self.y),
            z: ev(&self.z),
            g: ev(&self.g),
            mu_bar_n: self
                .aux
                .mu_tilde_n
                .iter()
                .enumerate()
                .map(|(q, m)| m / lambda.powi(q as i32 + 1))
                .collect(),
            rate_bounds: (1..=self.p).map(|j| self.rate_bound(j).expect("order in range").eval(lambda)).collect(),
            aux: self.aux.clone(),
        }
    }
}

/// Builds the `Y`/`Z`/`G` recursion symbolically in `1/lambda`.
pub fn derivative_bound_polynomials(spec: &ChainSpec, mu: &MuFamily) -> Result<BoundPolynomials> {
    let n = spec.n;
    let p = spec.p as usize;
    let r0 = spec.bounds[0];
    let sigma_n = &spec.sigmas[n - 1];

    let b_mu = (1..n)
        .map(|i| mu.specs[i - 1].residual_bound(mu.s_mu[i - 1] + 2.0 * mu.max_of(i - 1)))
        .collect::<Result<Vec<_>>>()?;
    let mu_top = mu.max_of(n - 1);
    let (b_lower, b_upper) = sigma_n.slope_bounds(sigma_n.s() + 2.0 * mu_top * sigma_n.l())?;
    let delta = (b_upper - b_lower) * sigma_n.l() * r0 / sigma_n.sigma_max();
    let sigma_n_sup = (1..=p as u32).map(|q| sigma_n.sup_derivative(q)).collect::<Result<Vec<_>>>()?;
    let mu_tilde_n: Vec<f64> = sigma_n_sup
        .iter()
        .enumerate()
        .map(|(q, s)| r0 * s * sigma_n.l().powi(q as i32 + 1) / sigma_n.sigma_max())
        .collect();
    let mu_bar = mu
        .specs
        .iter()
        .map(|m| (1..=p as u32).map(|a| m.sup_derivative(a)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let aux = BoundAux { b_mu, delta, b_lower, b_upper, sigma_n_sup, mu_tilde_n, mu_bar };

    let mut y = vec![vec![LambdaPoly::zero(); p]; n];
    let mut z = vec![vec![LambdaPoly::zero(); p]; n];
    let mut g = vec![vec![LambdaPoly::zero(); p]; p];
    if p == 0 {
        return Ok(BoundPolynomials { n, p: spec.p, y, z, g, aux });
    }

    let c = mu.alpha_tilde;
    // sum_q G_{q,j} mu_bar_{n,q} as a polynomial in l
    let rate = |g: &Vec<Vec<LambdaPoly>>, j: usize| -> LambdaPoly {
        (1..=j).fold(LambdaPoly::zero(), |acc, q| {
            acc.add(&g[q - 1][j - 1].mul(&LambdaPoly::monomial(aux.mu_tilde_n[q - 1], q)))
        })
    };

    for j in 1..=p {
        for i in 1..=n {
            y[i - 1][j - 1] = if j == 1 {
                if i == n {
                    LambdaPoly::constant(r0)
                } else {
                    let linear_gap = LambdaPoly(vec![
                        delta * sigma_n.s() / sigma_n.l(),
                        2.0 * delta * mu_top,
                    ]);
                    let tail: f64 = (i + 1..n).map(|l| aux.b_mu[l - 1]).sum::<f64>() + mu.max_of(i);
                    linear_gap.add(&LambdaPoly::monomial(c * tail, 1))
                }
            } else {
                let chain = (i + 1..=n).fold(LambdaPoly::zero(), |acc, b| acc.add(&y[b - 1][j - 2]));
                chain.mul(&LambdaPoly::monomial(c, 1)).add(&rate(&g, j - 1))
            };
        }
        for i in 1..=n {
            z[i - 1][j - 1] = if i == 1 {
                y[0][j - 1].clone()
            } else {
                let mut acc = y[i - 1][j - 1].clone();
                for a in 1..=j {
                    let args: Vec<LambdaPoly> = z[i - 2][..j - a + 1].to_vec();
                    let bell = bell_polynomial_in(j as u32, a as u32, &args)?;
                    acc = acc.add(&bell.scale(aux.mu_bar[i - 2][a - 1]));
                }
                acc
            };
        }
        for q in 1..=j {
            let args: Vec<LambdaPoly> = z[n - 1][..j - q + 1].to_vec();
            g[q - 1][j - 1] = bell_polynomial_in(j as u32, q as u32, &args)?;
        }
    }
    Ok(BoundPolynomials { n, p: spec.p, y, z, g, aux })
}

/// The bound tables at a given `lambda >= 1`.
pub fn derivative_bound_table(spec: &ChainSpec, mu: &MuFamily, lambda: f64) -> Result<BoundTable> {
    if !(lambda >= 1.0) {
        return Err(invalid(format!("lambda must be >= 1, got {lambda}")));
    }
    Ok(derivative_bound_polynomials(spec, mu)?.at(lambda))
}

/// Relative optimality of the lambda search.
pub const LAMBDA_TOLERANCE: f64 = 1.01;

/// Smallest `lambda >= 1` (within a factor [`LAMBDA_TOLERANCE`]) whose
/// certified rate bounds are all below `min(R_1, ..., R_p)`.
pub fn select_lambda(spec: &ChainSpec, mu: &MuFamily) -> Result<f64> {
    if spec.p == 0 {
        return Ok(1.0);
    }
    let polys = derivative_bound_polynomials(spec, mu)?;
    let r_low = spec.bounds[1..].iter().copied().fold(f64::INFINITY, f64::min);
    let rates = (1..=spec.p).map(|j| polys.rate_bound(j)).collect::<Result<Vec<_>>>()?;
    let feasible = |lambda: f64| rates.iter().all(|r| r.eval(lambda) <= r_low);
    if feasible(1.0) {
        return Ok(1.0);
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while !feasible(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Err(crate::Error::Infeasible("no lambda certifies the rate bounds".into()));
        }
    }
    while hi / lo > LAMBDA_TOLERANCE {
        let mid = (lo * hi).sqrt();
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
