//! Truncated Taylor series used as an independent derivative oracle.
#![allow(dead_code)]

use ratebound_core::saturation::SaturationSpec;

/// Coefficients `c[k]` of `sum_k c[k] t^k`, truncated at a fixed order.
#[derive(Debug, Clone)]
pub struct Jet(pub Vec<f64>);

impl Jet {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Jet(c)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet(self.0.iter().map(|a| a * s).collect())
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let k = self.order();
        let mut c = vec![0.0; k + 1];
        for i in 0..=k {
            for j in 0..=k - i {
                c[i + j] += self.0[i] * o.0[j];
            }
        }
        Jet(c)
    }

    /// `self^e` for a positive leading coefficient, via `J' e J = e J' J^e` recurrence.
    pub fn powf(&self, e: f64) -> Jet {
        let k = self.order();
        let a = &self.0;
        let mut b = vec![0.0; k + 1];
        b[0] = a[0].powf(e);
        for m in 1..=k {
            let mut s = 0.0;
            for j in 1..=m {
                s += (e * j as f64 - (m - j) as f64) * a[j] * b[m - j];
            }
            b[m] = s / (m as f64 * a[0]);
        }
        Jet(b)
    }

    /// `sigma(self)` by Taylor expansion of `sigma` around the constant term.
    pub fn compose(&self, sigma: &SaturationSpec) -> Jet {
        let k = self.order();
        let z0 = self.0[0];
        let mut shifted = self.clone();
        shifted.0[0] = 0.0;
        let mut out = Jet::constant(sigma.value(z0), k);
        let mut power = Jet::constant(1.0, k);
        let mut fact = 1.0;
        for j in 1..=k {
            power = power.mul(&shifted);
            fact *= j as f64;
            let d = sigma.eval(z0, j as u32).unwrap();
            out = out.add(&power.scale(d / fact));
        }
        out
    }

    /// `j!` times the `t^j` coefficient.
    pub fn derivative(&self, j: usize) -> f64 {
        (1..=j).map(|i| i as f64).product::<f64>() * self.0[j]
    }
}

/// Taylor jets of the state and the control of `x' = f(x, u)`, `u = law(x)`,
/// through the point `x0`, to the given order.
pub fn closed_loop_jets(
    x0: &[f64],
    order: usize,
    f: impl Fn(&[Jet], &Jet) -> Vec<Jet>,
    law: impl Fn(&[Jet]) -> Jet,
) -> (Vec<Jet>, Jet) {
    let n = x0.len();
    let mut x: Vec<Jet> = x0.iter().map(|&v| Jet::constant(v, order)).collect();
    for k in 0..order {
        let u = law(&x);
        let dx = f(&x, &u);
        for i in 0..n {
            x[i].0[k + 1] = dx[i].0[k] / (k + 1) as f64;
        }
    }
    let u = law(&x);
    (x, u)
}
