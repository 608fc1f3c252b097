//! Bounded stabilizers `nu(x) = -beta b^T x / (1 + |x|^2)^alpha` for `x' = A x + b u`
//! with skew-symmetric `A`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::bell_polynomial;
use crate::error::{invalid, Error, Result};

/// Relative tolerance on `A + A^T = 0`.
pub const SKEW_TOLERANCE: f64 = 1e-12;
/// Safety margin of the certification: sampled sups must stay below `(1 - margin) R_j`.
pub const CERTIFICATION_MARGIN: f64 = 0.05;
/// Number of halvings tried below `R_min`.
pub const BETA_HALVINGS: u32 = 20;

/// Validated plant data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewSystem {
    /// Rows of `A`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub alpha: f64,
    pub p: u32,
    pub bounds: Vec<f64>,
}

impl SkewSystem {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    pub fn b_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.b)
    }

    /// `A - beta b b^T`.
    pub fn a_beta(&self, beta: f64) -> DMatrix<f64> {
        let b = self.b_vector();
        self.a_matrix() - beta * &b * b.transpose()
    }

    fn r_min(&self) -> f64 {
        self.bounds.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Checks shapes, skew-symmetry, controllability and the design parameters.
pub fn validate_system(a: Vec<Vec<f64>>, b: Vec<f64>, alpha: f64, p: u32, bounds: Vec<f64>) -> Result<SkewSystem> {
    let n = b.len();
    if n == 0 {
        return Err(Error::Shape("system dimension must be at least 1".into()));
    }
    if a.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(Error::Shape(format!("A must be {n}x{n} to match b")));
    }
    if a.iter().flatten().chain(&b).any(|v| !v.is_finite()) {
        return Err(invalid("A and b must be finite"));
    }
    let scale = a.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..=i {
            if (a[i][j] + a[j][i]).abs() > SKEW_TOLERANCE * scale {
                return Err(Error::Shape(format!("A is not skew-symmetric at ({}, {})", i + 1, j + 1)));
            }
        }
    }
    if !(alpha >= 0.5 && alpha.is_finite()) {
        return Err(invalid(format!("alpha = {alpha} must be >= 1/2")));
    }
    if bounds.len() != p as usize + 1 {
        return Err(invalid(format!("expected {} bounds R_0..R_{p}, got {}", p + 1, bounds.len())));
    }
    if let Some((j, r)) = bounds.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
        return Err(invalid(format!("R_{j} = {r} must be positive")));
    }
    let sys = SkewSystem { a, b, alpha, p, bounds };
    let rank = kalman_rank(&sys.a_matrix(), &sys.b_vector());
    if rank < n {
        return Err(Error::Uncontrollable { rank, n });
    }
    Ok(sys)
}

fn kalman_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> usize {
    let n = b.len();
    let mut k = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        k.set_column(j, &col);
        col = a * col;
    }
    let sv = k.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > top * n as f64 * 1e-12).count()
}

/// Solves `P M + M^T P = -I` for symmetric `P` as a dense system in the
/// `n(n+1)/2` upper-triangular unknowns.
pub fn solve_lyapunov(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape("Lyapunov matrix must be square".into()));
    }
    let idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + j
    };
    let unknowns = n * (n + 1) / 2;
    let mut lhs = DMatrix::zeros(unknowns, unknowns);
    let mut rhs = DVector::zeros(unknowns);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            // (P M)_{ij} + (M^T P)_{ij} = sum_k P_ik M_kj + M_ki P_kj
            for k in 0..n {
                lhs[(row, idx(i, k))] += m[(k, j)];
                lhs[(row, idx(k, j))] += m[(k, i)];
            }
            if i == j {
                rhs[row] = -1.0;
            }
        }
    }
    let lu = lhs.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Conditioning("Lyapunov system is singular".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("Lyapunov solution is not finite".into()));
    }
    let p = DMatrix::from_fn(n, n, |i, j| sol[idx(i, j)]);
    let resid = lyapunov_residual(&p, m);
    if resid > 1e-8 * (1.0 + p.norm()) {
        return Err(Error::Conditioning(format!("Lyapunov residual {resid:e} too large")));
    }
    Ok(p)
}

/// `|P M + M^T P + I|` (Frobenius).
pub fn lyapunov_residual(p: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    (p * m + m.transpose() * p + DMatrix::<f64>::identity(n, n)).norm()
}

/// Largest real part of the eigenvalues.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Certified feedback with its Lyapunov data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewController {
    pub system: SkewSystem,
    pub beta: f64,
    /// Rows of `P`.
    pub p_matrix: Vec<Vec<f64>>,
    /// `K = max(beta, beta^2) |P b|^2 / (alpha + 1)`.
    pub k: f64,
    /// Certified `sup |U^(j)|`, `j = 0..p`: analytic for `j = 0`, sampled otherwise.
    pub certified: Vec<f64>,
}

/// Time derivatives of the state and the control at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewDerivatives {
    /// `x[k] = x^(k)`, `k = 0..=order`.
    pub x: Vec<Vec<f64>>,
    /// `u[k] = U^(k)`, `k = 0..=order`.
    pub u: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max_{r >= 0} r / (1 + r^2)^alpha`.
fn radial_peak(alpha: f64) -> f64 {
    if alpha <= 0.5 {
        1.0
    } else {
        let r = 1.0 / (2.0 * alpha - 1.0).sqrt();
        r / (1.0 + r * r).powf(alpha)
    }
}

fn binomials(k: usize) -> Vec<f64> {
    let mut row = vec![1.0; k + 1];
    for i in 1..k {
        row[i] = row[i - 1] * (k - i + 1) as f64 / i as f64;
    }
    row
}

/// `U^(0..=order)` and `x^(0..=order)` along `x' = A x + b nu(x)` for gain `beta`.
pub fn skew_derivatives(sys: &SkewSystem, beta: f64, x0: &[f64], order: usize) -> Result<SkewDerivatives> {
    let n = sys.n();
    if x0.len() != n {
        return Err(invalid(format!("state has dimension {}, system has {n}", x0.len())));
    }
    let alpha = sys.alpha;
    let g0 = 1.0 + dot(x0, x0);
    // d[a] = prod_{i<a} (-(alpha + i)), the a-th derivative factor of z^-alpha
    let mut d = vec![1.0; order + 1];
    for a in 1..=order {
        d[a] = -d[a - 1] * (alpha + (a - 1) as f64);
    }
    let g_pow: Vec<f64> = (0..=order).map(|a| g0.powf(-alpha - a as f64)).collect();
    let mut xs = vec![x0.to_vec()];
    let mut bx = vec![dot(&sys.b, x0)];
    let mut g = vec![g0];
    let mut u = vec![-beta * bx[0] * g_pow[0]];
    // f_l = (G^-alpha)^(l)
    let mut f = vec![g_pow[0]];
    for k in 1..=order {
        let prev = &xs[k - 1];
        let xk: Vec<f64> = (0..n).map(|i| dot(&sys.a[i], prev) + sys.b[i] * u[k - 1]).collect();
        bx.push(dot(&sys.b, &xk));
        xs.push(xk);
        let c = binomials(k);
        g.push((0..=k).map(|m| c[m] * dot(&xs[m], &xs[k - m])).sum());
        let mut fk = 0.0;
        for a in 1..=k {
            fk += d[a] * g_pow[a] * bell_polynomial(k as u32, a as u32, &g[1..=k - a + 1])?;
        }
        f.push(fk);
        let uk: f64 = (0..=k).map(|l| c[l] * f[l] * bx[k - l]).sum();
        u.push(-beta * uk);
    }
    Ok(SkewDerivatives { x: xs, u })
}

impl SkewController {
    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn p(&self) -> u32 {
        self.system.p
    }

    pub fn p_dmatrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.p_matrix[i][j])
    }

    /// `nu(x)`; panics on a dimension mismatch.
    pub fn feedback(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n(), "state dimension");
        -self.beta * dot(&self.system.b, x) / (1.0 + dot(x, x)).powf(self.system.alpha)
    }

    pub fn eval_skew_feedback(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n() {
            return Err(invalid(format!("state has dimension {}, system has {}", x.len(), self.n())));
        }
        Ok(self.feedback(x))
    }

    pub fn state_derivatives(&self, x: &[f64], k: usize) -> Result<SkewDerivatives> {
        skew_derivatives(&self.system, self.beta, x, k)
    }

    /// `V(x) = x^T P x + K ((1 + |x|^2)^(alpha + 1) - 1)`.
    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        let px: f64 = self.p_matrix.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
        let r2 = dot(x, x);
        // (1 + r2)^(a+1) - 1 without cancellation for small r2
        px + self.k * ((self.system.alpha + 1.0) * r2.ln_1p()).exp_m1()
    }

    /// `|P A_beta + A_beta^T P + I|`.
    pub fn lyapunov_residual(&self) -> f64 {
        lyapunov_residual(&self.p_dmatrix(), &self.system.a_beta(self.beta))
    }
}

/// Builds the controller for a fixed `beta` without any bound certification.
pub fn controller_for_beta(sys: &SkewSystem, beta: f64) -> Result<SkewController> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta = {beta} must be positive")));
    }
    let a_beta = sys.a_beta(beta);
    let abscissa = spectral_abscissa(&a_beta);
    if abscissa >= -1e-10 {
        return Err(Error::Conditioning(format!("A - beta b b^T is not Hurwitz (max real part {abscissa:e})")));
    }
    let p = solve_lyapunov(&a_beta)?;
    if p.clone().cholesky().is_none() {
        return Err(Error::Conditioning("Lyapunov solution is not positive definite".into()));
    }
    let pb = (&p * sys.b_vector()).norm();
    // V' <= -|x|^2/2 needs K (alpha + 1) >= beta |P b|^2; beta^2 alone is short of that when beta < 1
    let k = beta.max(beta * beta) * pb * pb / (sys.alpha + 1.0);
    let n = sys.n();
    let amplitude = beta * sys.b_vector().norm() * radial_peak(sys.alpha);
    Ok(SkewController {
        system: sys.clone(),
        beta,
        p_matrix: (0..n).map(|i| p.row(i).iter().copied().collect()).collect(),
        k,
        certified: vec![amplitude],
    })
}

/// Quasi-random certification sample: Halton points mapped to directions
/// and log-spaced radii in `[1e-3, 1e6]`.
#[derive(Debug, Clone)]
pub struct CertificationSample {
    pub states: Vec<Vec<f64>>,
}

/// Samples drawn by [`certify_beta`].
pub const SAMPLE_SIZE: usize = 100_000;
/// Best samples refined by coordinate search.
pub const REFINED: usize = 100;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

impl CertificationSample {
    pub fn halton(n: usize, count: usize) -> Self {
        let mut dims: Vec<u64> = PRIMES.to_vec();
        // extra primes for large n
        let mut candidate = 59;
        while dims.len() < n + 1 {
            if (2..candidate).take_while(|d| d * d <= candidate).all(|d| candidate % d != 0) {
                dims.push(candidate);
            }
            candidate += 2;
        }
        let states = (1..=count as u64)
            .map(|i| {
                let radius = 10f64.powf(-3.0 + 9.0 * radical_inverse(i, dims[0]));
                let mut dir: Vec<f64> = (0..n).map(|k| 2.0 * radical_inverse(i, dims[k + 1]) - 1.0).collect();
                let norm = dot(&dir, &dir).sqrt();
                if norm == 0.0 {
                    dir[0] = 1.0;
                } else {
                    dir.iter_mut().for_each(|v| *v /= norm);
                }
                dir.iter().map(|v| v * radius).collect()
            })
            .collect();
        CertificationSample { states }
    }
}

/// Sampled `sup |U^(j)|` with its maximizing state.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSup {
    pub value: f64,
    pub witness: Vec<f64>,
}

fn abs_derivative(sys: &SkewSystem, beta: f64, x: &[f64], j: usize) -> f64 {
    skew_derivatives(sys, beta, x, j).map(|d| d.u[j].abs()).unwrap_or(f64::INFINITY)
}

fn coordinate_search(sys: &SkewSystem, beta: f64, j: usize, start: &[f64], value: f64) -> (f64, Vec<f64>) {
    let mut x = start.to_vec();
    let mut best = value;
    let mut step = 0.1 * dot(&x, &x).sqrt().max(1e-3);
    for _ in 0..60 {
        let mut improved = false;
        for i in 0..x.len() {
            for s in [step, -step] {
                x[i] += s;
                let v = abs_derivative(sys, beta, &x, j);
                if v > best {
                    best = v;
                    improved = true;
                } else {
                    x[i] -= s;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-9 * (1.0 + dot(&x, &x).sqrt()) {
                break;
            }
        }
    }
    (best, x)
}

/// Sampled suprema of `|U^(j)|`, `j = 1..=p`, over the sample plus refinement.
pub fn sampled_sups(sys: &SkewSystem, beta: f64, sample: &CertificationSample) -> Vec<SampledSup> {
    let p = sys.p as usize;
    let values: Vec<Vec<f64>> = sample
        .states
        .par_iter()
        .map(|x| match skew_derivatives(sys, beta, x, p) {
            Ok(d) => d.u[1..].iter().map(|v| v.abs()).collect(),
            Err(_) => vec![f64::INFINITY; p],
        })
        .collect();
    (1..=p)
        .map(|j| {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[b][j - 1].total_cmp(&values[a][j - 1]).then(a.cmp(&b)));
            order.truncate(REFINED);
            let refined: Vec<(f64, Vec<f64>)> = order
                .par_iter()
                .map(|&i| coordinate_search(sys, beta, j, &sample.states[i], values[i][j - 1]))
                .collect();
            let (value, witness) = refined
                .into_iter()
                .fold((f64::NEG_INFINITY, Vec::new()), |acc, c| if c.0 > acc.0 { c } else { acc });
            SampledSup { value, witness }
        })
        .collect()
}

/// Checks one `beta` against every bound; returns the controller or the worst violation.
pub fn certify_at(sys: &SkewSystem, beta: f64, sample: &CertificationSample) -> Result<SkewController> {
    let mut ctrl = controller_for_beta(sys, beta)?;
    let limit = |j: usize| sys.bounds[j] * (1.0 - CERTIFICATION_MARGIN);
    if ctrl.certified[0] > limit(0) {
        return Err(Error::CertificationFailed {
            smallest_beta: beta,
            order: 0,
            sup: ctrl.certified[0],
            limit: limit(0),
            witness: Vec::new(),
        });
    }
    let sups = sampled_sups(sys, beta, sample);
    let worst = sups
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1, s, s.value / limit(i + 1)))
        .fold(None::<(usize, &SampledSup, f64)>, |acc, c| match acc {
            Some(a) if a.2 >= c.2 => Some(a),
            _ => Some(c),
        });
    if let Some((j, s, ratio)) = worst {
        if ratio > 1.0 {
            return Err(Error::CertificationFailed {
                smallest_beta: beta,
                order: j,
                sup: s.value,
                limit: limit(j),
                witness: s.witness.clone(),
            });
        }
    }
    ctrl.certified.extend(sups.iter().map(|s| s.value));
    Ok(ctrl)
}

/// Largest `beta` in `{R_min, R_min/2, ...}` (down to `R_min 2^-20`) that passes
/// [`certify_at`]. For `p = 0` the amplitude bound is analytic and
/// `beta = R_0 / max(|b|, 1)`.
pub fn certify_beta(sys: &SkewSystem) -> Result<SkewController> {
    let r_min = sys.r_min();
    if sys.p == 0 {
        return controller_for_beta(sys, r_min / sys.b_vector().norm().max(1.0));
    }
    let sample = CertificationSample::halton(sys.n(), SAMPLE_SIZE);
    let mut last = None;
    for k in 0..=BETA_HALVINGS {
        let beta = r_min * 0.5f64.powi(k as i32);
        match certify_at(sys, beta, &sample) {
            Ok(ctrl) => return Ok(ctrl),
            Err(e @ Error::CertificationFailed { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one beta tried"))
}
