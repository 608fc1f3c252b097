//! Dense univariate polynomials and real-root isolation on bounded intervals.

/// Coefficients in ascending powers: `c[0] + c[1] u + c[2] u^2 + ...`.
pub(crate) fn eval(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &x| acc * u + x)
}

pub(crate) fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &x)| i as f64 * x).collect()
}

pub(crate) fn nth_derivative(c: &[f64], j: usize) -> Vec<f64> {
    let mut d = c.to_vec();
    for _ in 0..j {
        d = derivative(&d);
    }
    d
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn trimmed(c: &[f64]) -> &[f64] {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut end = c.len();
    while end > 0 && c[end - 1].abs() <= 1e-15 * scale {
        end -= 1;
    }
    &c[..end]
}

/// Real roots of the polynomial inside `[lo, hi]`, ascending.
///
/// Critical points split the interval into monotone pieces; each piece with a
/// sign change is bisected to machine precision.
pub(crate) fn roots_in(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let c = trimmed(c);
    if c.len() <= 1 || !(hi > lo) {
        return Vec::new();
    }
    if c.len() == 2 {
        let r = -c[0] / c[1];
        return if (lo..=hi).contains(&r) { vec![r] } else { Vec::new() };
    }
    let mut knots = vec![lo];
    knots.extend(roots_in(&derivative(c), lo, hi));
    knots.push(hi);

    let mut out: Vec<f64> = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (eval(c, a), eval(c, b));
        let found = if fa == 0.0 {
            Some(a)
        } else if fb == 0.0 {
            Some(b)
        } else if fa.signum() != fb.signum() {
            Some(bisect(c, a, b, fa))
        } else {
            None
        };
        if let Some(r) = found {
            if out.last().map_or(true, |&p| (r - p).abs() > 1e-13 * (1.0 + r.abs())) {
                out.push(r);
            }
        }
    }
    out
}

fn bisect(c: &[f64], mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = eval(c, m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Minimum and maximum of the polynomial over `[lo, hi]` (endpoints plus
/// stationary points).
pub(crate) fn extrema(c: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut pts = vec![lo, hi];
    pts.extend(roots_in(&derivative(c), lo, hi));
    pts.iter().map(|&u| eval(c, u)).fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), v| {
        (mn.min(v), mx.max(v))
    })
}


/// `(u + origin) * p'(u) - p(u)`; its zeros are the stationary points of `p(r)/r`.
pub(crate) fn ratio_stationary(c: &[f64], origin: f64) -> Vec<f64> {
    let d = derivative(c);
    let mut out = vec![0.0; c.len()];
    for (i, &x) in d.iter().enumerate() {
        out[i] += origin * x;
        out[i + 1] += x;
    }
    sub(&out, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivative() {
        let c = [1.0, -3.0, 0.0, 2.0];
        assert_eq!(eval(&c, 2.0), 1.0 - 6.0 + 16.0);
        assert_eq!(derivative(&c), vec![-3.0, 0.0, 6.0]);
        assert_eq!(nth_derivative(&c, 3), vec![12.0]);
        assert!(nth_derivative(&c, 4).is_empty());
    }

    #[test]
    fn roots_of_product() {
        // (u - 0.2)(u - 0.5)(u - 0.9)
        let c = [-0.09, 0.73, -1.6, 1.0];
        let r = roots_in(&c, 0.0, 1.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([0.2, 0.5, 0.9]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(roots_in(&c, 0.3, 0.4).len(), 0);
    }

    #[test]
    fn double_root_is_found_as_critical_point() {
        let c = [0.25, -1.0, 1.0]; // (u - 0.5)^2
        let r = roots_in(&c, 0.0, 1.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.5).abs() < 1e-12);
    }


    #[test]
    fn extrema_of_cubic() {
        let c = [0.0, -3.0, 0.0, 1.0]; // u^3 - 3u, extrema at +-1
        let (mn, mx) = extrema(&c, -2.0, 2.0);
        assert_eq!((mn, mx), (-2.0, 2.0));
        let (mn, mx) = extrema(&c, -0.5, 0.5);
        assert!((mx - 1.375).abs() < 1e-14 && (mn + 1.375).abs() < 1e-14);
    }
}
