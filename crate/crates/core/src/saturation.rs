//! Piecewise-polynomial saturation functions of class `S(p)`.
//!
//! A [`SaturationSpec`] stores `sigma` on `[0, S]` as polynomial pieces; for
//! `r >= S` it is the plateau `sigma_max`, and negative arguments are handled
//! by odd symmetry. Each piece is a polynomial in `r - origin`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::poly;

/// One polynomial segment `[start, end]`, evaluated in the local variable `r - origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub origin: f64,
    pub coeffs: Vec<f64>,
}

impl Piece {
    fn local(&self, r: f64) -> f64 {
        r - self.origin
    }
    fn span(&self) -> (f64, f64) {
        (self.start - self.origin, self.end - self.origin)
    }
}

/// Serialized form of a saturation: constants plus explicit pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationData {
    pub p: u32,
    pub sigma_max: f64,
    pub l: f64,
    pub s: f64,
    pub alpha: f64,
    pub pieces: Vec<Piece>,
}

/// An odd `C^p` saturation: `alpha * r` on `[-L, L]`, `+-sigma_max` beyond `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SaturationData", into = "SaturationData")]
pub struct SaturationSpec {
    data: SaturationData,
    // derivs[piece][j] = coefficients of the j-th derivative, j = 0..=p+1
    derivs: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<SaturationData> for SaturationSpec {
    type Error = Error;
    fn try_from(data: SaturationData) -> Result<Self> {
        let spec = SaturationSpec::from_parts(data)?;
        let report = spec.membership(1e-9);
        if !report.passes() {
            return Err(invalid(format!("saturation is not in S({}): {report:?}", spec.p())));
        }
        Ok(spec)
    }
}

impl From<SaturationSpec> for SaturationData {
    fn from(s: SaturationSpec) -> Self {
        s.data
    }
}

impl SaturationSpec {
    /// Builds a spec from raw parts; checks structure but not `S(p)` membership.
    pub fn from_parts(data: SaturationData) -> Result<Self> {
        let SaturationData { sigma_max, l, s, alpha, .. } = data;
        if !(sigma_max > 0.0 && l > 0.0 && alpha > 0.0 && s >= l) || !s.is_finite() {
            return Err(invalid(format!(
                "saturation constants must satisfy sigma_max, L, alpha > 0 and finite S >= L (got {sigma_max}, {l}, {s}, {alpha})"
            )));
        }
        if data.pieces.is_empty() || data.pieces[0].start != 0.0 {
            return Err(invalid("saturation pieces must start at r = 0"));
        }
        for w in data.pieces.windows(2) {
            if w[0].end != w[1].start {
                return Err(invalid("saturation pieces must be contiguous"));
            }
        }
        let last_end = data.pieces.last().map(|p| p.end).unwrap_or(0.0);
        if last_end != s {
            return Err(invalid(format!("pieces end at {last_end}, expected S = {s}")));
        }
        if data.pieces.iter().any(|p| !(p.end > p.start) || p.coeffs.iter().any(|c| !c.is_finite())) {
            return Err(invalid("saturation pieces must have positive length and finite coefficients"));
        }
        let orders = data.p as usize + 2;
        let derivs = data
            .pieces
            .iter()
            .map(|piece| (0..orders).map(|j| poly::nth_derivative(&piece.coeffs, j)).collect())
            .collect();
        Ok(Self { data, derivs })
    }

    pub fn p(&self) -> u32 {
        self.data.p
    }
    pub fn sigma_max(&self) -> f64 {
        self.data.sigma_max
    }
    pub fn l(&self) -> f64 {
        self.data.l
    }
    pub fn s(&self) -> f64 {
        self.data.s
    }
    pub fn alpha(&self) -> f64 {
        self.data.alpha
    }
    pub fn pieces(&self) -> &[Piece] {
        &self.data.pieces
    }
    pub fn data(&self) -> &SaturationData {
        &self.data
    }

    fn piece_index(&self, a: f64) -> usize {
        let pieces = &self.data.pieces;
        pieces.iter().position(|p| a < p.end).unwrap_or(pieces.len() - 1)
    }

    // sigma^(j)(a) for a >= 0; j may go one past p for internal use
    fn eval_nonneg(&self, a: f64, j: usize) -> f64 {
        if a >= self.data.s {
            return if j == 0 { self.data.sigma_max } else { 0.0 };
        }
        let i = self.piece_index(a);
        let piece = &self.data.pieces[i];
        match self.derivs[i].get(j) {
            Some(c) => poly::eval(c, piece.local(a)),
            None => poly::eval(&poly::nth_derivative(&piece.coeffs, j), piece.local(a)),
        }
    }

    fn eval_raw(&self, r: f64, j: usize) -> f64 {
        let v = self.eval_nonneg(r.abs(), j);
        // sigma^(j)(-r) = (-1)^(j+1) sigma^(j)(r)
        if r < 0.0 && j % 2 == 0 {
            -v
        } else {
            v
        }
    }

    /// `sigma^(j)(r)`, `0 <= j <= p`.
    pub fn eval(&self, r: f64, j: u32) -> Result<f64> {
        if j > self.data.p {
            return Err(invalid(format!("derivative order {j} exceeds smoothness p = {}", self.data.p)));
        }
        Ok(self.eval_raw(r, j as usize))
    }

    /// `sigma(r)`.
    pub fn value(&self, r: f64) -> f64 {
        self.eval_raw(r, 0)
    }

    /// Fills `out[a - 1] = sigma^(a)(r)` for `a = 1..=out.len()`; `out.len() <= p`.
    pub fn derivatives_into(&self, r: f64, out: &mut [f64]) {
        debug_assert!(out.len() <= self.data.p as usize);
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = self.eval_raw(r, a + 1);
        }
    }

    /// Index of the polynomial piece containing `|r|`, or `pieces.len()` on the plateau.
    pub fn region(&self, r: f64) -> usize {
        let a = r.abs();
        if a >= self.data.s {
            self.data.pieces.len()
        } else {
            self.piece_index(a)
        }
    }

    /// `max_r |sigma^(j)(r)|` for `1 <= j <= p`.
    pub fn sup_derivative(&self, j: u32) -> Result<f64> {
        if j == 0 || j > self.data.p {
            return Err(invalid(format!("sup_derivative needs 1 <= j <= p = {}, got {j}", self.data.p)));
        }
        let mut best = 0.0f64;
        for (i, piece) in self.data.pieces.iter().enumerate() {
            let (lo, hi) = piece.span();
            let (mn, mx) = poly::extrema(&self.derivs[i][j as usize], lo, hi);
            best = best.max(mn.abs()).max(mx.abs());
        }
        Ok(best)
    }

    /// `max |r - sigma(r)|` over `|r| <= radius`.
    pub fn residual_bound(&self, radius: f64) -> Result<f64> {
        if !(radius > 0.0) {
            return Err(invalid(format!("residual bound needs a positive radius, got {radius}")));
        }
        let mut best = 0.0f64;
        for piece in &self.data.pieces {
            if piece.start >= radius {
                break;
            }
            let hi = piece.end.min(radius);
            // (u + origin) - q(u)
            let f = poly::sub(&[piece.origin, 1.0], &piece.coeffs);
            let (mn, mx) = poly::extrema(&f, piece.start - piece.origin, hi - piece.origin);
            best = best.max(mn.abs()).max(mx.abs());
        }
        if radius > self.data.s {
            let sm = self.data.sigma_max;
            best = best.max((self.data.s - sm).abs()).max((radius - sm).abs());
        }
        Ok(best)
    }

    /// `(min sigma(r)/r over 0 < r <= radius, max sigma(r)/r over r > 0)`.
    pub fn slope_bounds(&self, radius: f64) -> Result<(f64, f64)> {
        if !(radius > 0.0) {
            return Err(invalid(format!("slope bounds need a positive radius, got {radius}")));
        }
        let ratio_range = |piece: &Piece, lo: f64, hi: f64| -> (f64, f64) {
            let mut pts = vec![lo, hi];
            let stat = poly::ratio_stationary(&piece.coeffs, piece.origin);
            pts.extend(poly::roots_in(&stat, lo - piece.origin, hi - piece.origin).iter().map(|u| u + piece.origin));
            pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), &r| {
                let v = if r > 0.0 { poly::eval(&piece.coeffs, piece.local(r)) / r } else { self.data.alpha };
                (mn.min(v), mx.max(v))
            })
        };
        let mut upper = f64::NEG_INFINITY;
        let mut lower = f64::INFINITY;
        for piece in &self.data.pieces {
            upper = upper.max(ratio_range(piece, piece.start, piece.end).1);
            if piece.start < radius {
                let (mn_r, _) = ratio_range(piece, piece.start, piece.end.min(radius));
                lower = lower.min(mn_r);
            }
        }
        // plateau: sigma_max / r is decreasing
        upper = upper.max(self.data.sigma_max / self.data.s);
        if radius > self.data.s {
            lower = lower.min(self.data.sigma_max / radius);
        }
        Ok((lower, upper))
    }

    /// Executable form of the `S(p)` definition.
    pub fn membership(&self, tol: f64) -> MembershipReport {
        let d = &self.data;
        let mut report = MembershipReport {
            constants: d.sigma_max > 0.0
                && d.l > 0.0
                && d.alpha > 0.0
                && d.s >= d.l
                && d.alpha * d.l <= d.sigma_max * (1.0 + tol)
                && (d.p == 0 || d.s > d.l),
            ..Default::default()
        };

        // odd extension is C^p at 0 iff the even derivatives vanish there
        report.odd = (0..=d.p as usize).step_by(2).all(|j| self.eval_nonneg(0.0, j).abs() <= tol);

        let samples = 1000;
        report.linear_zone = (0..=samples).all(|i| {
            let r = d.l * i as f64 / samples as f64;
            (self.eval_nonneg(r, 0) - d.alpha * r).abs() <= tol * (1.0 + r.abs())
        });

        let plateau_left = self.eval_nonneg(d.s - 1e-12 * d.s.max(1.0), 0);
        report.plateau = (plateau_left - d.sigma_max).abs() <= tol.max(1e-9) * (1.0 + d.sigma_max);

        report.sign = d.pieces.iter().all(|piece| {
            let (lo, hi) = piece.span();
            let lo_eff = if piece.start == 0.0 {
                // the piece through the origin must leave it with positive slope
                if poly::eval(&poly::derivative(&piece.coeffs), lo) <= 0.0 {
                    return false;
                }
                lo + (hi - lo) * 1e-9
            } else {
                lo
            };
            poly::extrema(&piece.coeffs, lo_eff, hi).0 > 0.0
        });

        let mut worst = 0.0f64;
        for (i, piece) in d.pieces.iter().enumerate() {
            for j in 0..=d.p as usize {
                let left = poly::eval(&self.derivs[i][j], piece.end - piece.origin);
                let right = if i + 1 < d.pieces.len() {
                    let next = &d.pieces[i + 1];
                    poly::eval(&self.derivs[i + 1][j], next.start - next.origin)
                } else if j == 0 {
                    d.sigma_max
                } else {
                    0.0
                };
                worst = worst.max((left - right).abs());
            }
        }
        report.max_knot_jump = worst;
        report.continuity = worst <= tol;
        report
    }

    /// Rescaled copy `mu(s) = mu_max * sigma(s * L / l_mu) / sigma_max`.
    pub fn scale_mu(&self, mu_max: f64, l_mu: f64) -> Result<Self> {
        if !(mu_max > 0.0 && l_mu > 0.0) {
            return Err(invalid(format!("scale_mu needs positive mu_max and L_mu, got {mu_max}, {l_mu}")));
        }
        let d = &self.data;
        let c = d.l / l_mu;
        let amp = mu_max / d.sigma_max;
        let pieces = d
            .pieces
            .iter()
            .map(|piece| Piece {
                start: piece.start / c,
                end: piece.end / c,
                origin: piece.origin / c,
                coeffs: piece
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| x * amp * c.powi(k as i32))
                    .collect(),
            })
            .collect();
        Self::from_parts(SaturationData {
            p: d.p,
            sigma_max: mu_max,
            l: l_mu,
            s: d.s / c,
            alpha: d.alpha * c * amp,
            pieces,
        })
    }
}

/// Outcome of the `S(p)` membership test.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MembershipReport {
    pub constants: bool,
    pub odd: bool,
    pub linear_zone: bool,
    pub plateau: bool,
    pub sign: bool,
    pub continuity: bool,
    pub max_knot_jump: f64,
}

impl MembershipReport {
    pub fn passes(&self) -> bool {
        self.constants && self.odd && self.linear_zone && self.plateau && self.sign && self.continuity
    }
}

fn linear_piece(end: f64, alpha: f64) -> Piece {
    Piece { start: 0.0, end, origin: 0.0, coeffs: vec![0.0, alpha] }
}

/// Degree `2p + 1` Hermite transition on `[0, w]` (local variable) from the
/// linear zone into the plateau.
fn hermite_transition(p: u32, sigma_max: f64, l: f64, alpha: f64, w: f64) -> Result<Vec<f64>> {
    let m = 2 * p as usize + 2;
    // Solve in t = u / w, then rescale.
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    let falling = |i: usize, k: usize| -> f64 { ((i - k + 1)..=i).map(|x| x as f64).product() };
    for k in 0..=p as usize {
        // t = 0: only the t^k coefficient survives
        a[(k, k)] = falling(k, k);
        // t = 1
        let row = p as usize + 1 + k;
        for i in k..m {
            a[(row, i)] = falling(i, k);
        }
    }
    rhs[0] = alpha * l;
    if p >= 1 {
        rhs[1] = alpha * w;
    }
    rhs[p as usize + 1] = sigma_max;
    let t = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Conditioning("Hermite interpolation system is singular".into()))?;
    Ok(t.iter().enumerate().map(|(i, &c)| c / w.powi(i as i32)).collect())
}

/// Builds an `S(p)` saturation with a single Hermite transition on `[L, S]`.
///
/// `S - L` starts at `(sigma_max - alpha L) / alpha` and doubles until the
/// transition polynomial is monotone.
pub fn make_hermite_saturation(p: u32, sigma_max: f64, l: f64, alpha: f64) -> Result<SaturationSpec> {
    if !(sigma_max > 0.0 && l > 0.0 && alpha > 0.0) {
        return Err(invalid("Hermite saturation needs positive sigma_max, L, alpha"));
    }
    let gap = sigma_max - alpha * l;
    if gap < 0.0 || (gap == 0.0 && p > 0) {
        return Err(Error::Infeasible(format!(
            "alpha * L = {} must be below sigma_max = {sigma_max}",
            alpha * l
        )));
    }
    if gap == 0.0 {
        // clamp
        return SaturationSpec::try_from(SaturationData {
            p,
            sigma_max,
            l,
            s: l,
            alpha,
            pieces: vec![linear_piece(l, alpha)],
        });
    }
    let mut w = gap / alpha;
    for _ in 0..60 {
        let coeffs = hermite_transition(p, sigma_max, l, alpha, w)?;
        let (min_slope, _) = poly::extrema(&poly::derivative(&coeffs), 0.0, w);
        if min_slope >= -1e-12 * alpha {
            return SaturationSpec::try_from(SaturationData {
                p,
                sigma_max,
                l,
                s: l + w,
                alpha,
                pieces: vec![
                    linear_piece(l, alpha),
                    Piece { start: l, end: l + w, origin: l, coeffs },
                ],
            });
        }
        w *= 2.0;
    }
    Err(Error::Infeasible("no monotone Hermite transition found".into()))
}

/// The `S(2)` function with constants `(2, 1, 2, 1)` made of two quartics.
pub fn make_paper_example_saturation() -> SaturationSpec {
    SaturationSpec::try_from(SaturationData {
        p: 2,
        sigma_max: 2.0,
        l: 1.0,
        s: 2.0,
        alpha: 1.0,
        pieces: vec![
            linear_piece(1.0, 1.0),
            Piece { start: 1.0, end: 1.5, origin: 0.0, coeffs: vec![-4.0, 15.0, -18.0, 10.0, -2.0] },
            Piece { start: 1.5, end: 2.0, origin: 0.0, coeffs: vec![50.0, -120.0, 108.0, -42.0, 6.0] },
        ],
    })
    .expect("preset saturation is in S(2)")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).ceil() as usize;
        (0..=n).map(|i| f(lo + (hi - lo) * i as f64 / n as f64)).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn preset_values() {
        let s = make_paper_example_saturation();
        assert_eq!(s.value(0.5), 0.5);
        assert_eq!(s.value(3.0), 2.0);
        assert!((s.value(1.5) - 1.625).abs() < 1e-12);
        // both quartics agree at the inner knot
        let a = poly::eval(&s.pieces()[1].coeffs, 1.5);
        let b = poly::eval(&s.pieces()[2].coeffs, 1.5);
        assert!((a - b).abs() < 1e-12 && (a - 1.625).abs() < 1e-12);
        assert_eq!(s.eval(0.2, 1).unwrap(), 1.0);
        assert_eq!(s.eval(5.0, 1).unwrap(), 0.0);
        assert_eq!(s.eval(-1.2, 0).unwrap(), -s.value(1.2));
        assert!(s.eval(0.3, 3).is_err());
    }

    #[test]
    fn preset_membership() {
        let s = make_paper_example_saturation();
        let rep = s.membership(1e-9);
        assert!(rep.passes(), "{rep:?}");
        for knot in [1.0, 1.5, 2.0] {
            for j in 0..=2 {
                let l = s.eval(knot - 1e-10, j).unwrap();
                let r = s.eval(knot + 1e-10, j).unwrap();
                assert!((l - r).abs() < 1e-6, "knot {knot} order {j}");
            }
        }
    }

    #[test]
    fn odd_symmetry_of_derivatives() {
        let s = make_paper_example_saturation();
        for r in [0.3, 1.2, 1.7, 2.5] {
            for j in 0..=2u32 {
                let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
                assert_eq!(s.eval(-r, j).unwrap(), sign * s.eval(r, j).unwrap());
            }
        }
    }

    #[test]
    fn hermite_clamp() {
        let s = make_hermite_saturation(0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(s.s(), 1.0);
        assert_eq!(s.value(0.4), 0.4);
        assert_eq!(s.value(-7.0), -1.0);
        assert!(s.membership(1e-9).passes());
    }

    #[test]
    fn hermite_knot_derivatives() {
        let s1 = make_hermite_saturation(1, 2.0, 1.0, 1.0).unwrap();
        let tr = &s1.pieces()[1];
        let d = poly::derivative(&tr.coeffs);
        assert!((poly::eval(&d, 0.0) - 1.0).abs() < 1e-12);
        assert!(poly::eval(&d, s1.s() - s1.l()).abs() < 1e-12);
        assert!(s1.membership(1e-9).passes());

        let s2 = make_hermite_saturation(2, 2.0, 1.0, 1.0).unwrap();
        let tr = &s2.pieces()[1];
        let dd = poly::nth_derivative(&tr.coeffs, 2);
        assert!(poly::eval(&dd, 0.0).abs() < 1e-10);
        assert!(poly::eval(&dd, s2.s() - s2.l()).abs() < 1e-10);
        assert!(s2.membership(1e-9).passes());
    }

    #[test]
    fn hermite_infeasible() {
        assert!(matches!(make_hermite_saturation(1, 1.0, 1.0, 1.0), Err(Error::Infeasible(_))));
        assert!(matches!(make_hermite_saturation(2, 1.0, 2.0, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn scaled_families() {
        let s = make_paper_example_saturation();
        let mu2 = s.scale_mu(0.4, 0.2).unwrap();
        assert!((mu2.s() - 0.4).abs() < 1e-15);
        assert!((mu2.alpha() - 1.0).abs() < 1e-15);
        assert!(mu2.membership(1e-9).passes());
        let mu1 = s.scale_mu(1.0 / 12.0, 1.0 / 24.0).unwrap();
        assert!((mu1.s() - 1.0 / 12.0).abs() < 1e-15);
        let same = s.scale_mu(2.0, 1.0).unwrap();
        for r in [-3.0, -1.3, 0.2, 1.55, 1.9] {
            assert!((same.value(r) - s.value(r)).abs() < 1e-14);
        }
        for r in [0.05, 0.1, 0.3, 0.39, 0.7] {
            assert!((mu2.value(r) - 0.2 * s.value(5.0 * r)).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_suprema_match_grid() {
        let s = make_paper_example_saturation();
        let s1 = s.sup_derivative(1).unwrap();
        let g1 = grid_max(|r| s.eval(r, 1).unwrap().abs(), 0.0, 3.0, 1e-4);
        assert!((s1 - 1.5).abs() < 1e-10 && s1 >= g1 - 1e-12 && s1 - g1 < 1e-6);
        let s2 = s.sup_derivative(2).unwrap();
        let g2 = grid_max(|r| s.eval(r, 2).unwrap().abs(), 0.0, 3.0, 1e-4);
        assert!((s2 - 4.5).abs() < 1e-10 && s2 >= g2 - 1e-12 && s2 - g2 < 1e-6);
        let clamp = make_hermite_saturation(0, 1.0, 1.0, 1.0).unwrap();
        assert!(clamp.sup_derivative(1).is_err());
    }

    #[test]
    fn residuals() {
        let clamp = make_hermite_saturation(0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(clamp.residual_bound(0.8).unwrap(), 0.0);
        assert!(clamp.residual_bound(-1.0).is_err());
        let s = make_paper_example_saturation();
        let mu2 = s.scale_mu(0.4, 0.2).unwrap();
        let radius = mu2.s() + 2.0 / 12.0;
        let b = mu2.residual_bound(radius).unwrap();
        let g = grid_max(|r| (r - mu2.value(r)).abs(), 0.0, radius, 1e-5);
        assert!(b > 0.0 && (b - g).abs() < 1e-8, "{b} vs {g}");
        let full = s.residual_bound(2.0).unwrap();
        let gf = grid_max(|r| (r - s.value(r)).abs(), 0.0, 2.0, 1e-5);
        assert!((full - gf).abs() < 1e-8);
    }

    #[test]
    fn slopes() {
        let clamp = make_hermite_saturation(0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(clamp.slope_bounds(1.0).unwrap(), (1.0, 1.0));
        assert!(clamp.slope_bounds(0.0).is_err());
        let s = make_paper_example_saturation();
        let radius = 2.0 + 2.0 * 0.4;
        let (lo, hi) = s.slope_bounds(radius).unwrap();
        let ghi = grid_max(|r| s.value(r) / r, 1e-6, 4.0, 1e-5);
        let glo = -grid_max(|r| -s.value(r) / r, 1e-6, radius, 1e-5);
        assert!((hi - ghi).abs() < 1e-8 && (lo - glo).abs() < 1e-8, "{lo} {hi} {glo} {ghi}");
        assert!((hi - 10.0 / 9.0).abs() < 1e-10);
        assert!((lo - 5.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn serde_roundtrip_rejects_non_members() {
        let s = make_paper_example_saturation();
        let mut data = s.data().clone();
        data.pieces[1].coeffs[0] += 0.1;
        assert!(SaturationSpec::try_from(data).is_err());
    }
}
