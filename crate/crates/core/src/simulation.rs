//! Fixed-step RK4 closed-loop simulation, sampled differentiation and CSV I/O.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_MAX: f64 = 1e4;
pub const DEFAULT_EPS: f64 = 1e-2;

/// Sampled closed-loop run on the uniform grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub x0: Vec<f64>,
    pub meta: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&self.x0)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| norm(x)).collect()
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    pub t_max: f64,
    /// Stop once `|x| <= eps` (after `tail` more seconds); `None` runs to `t_max`.
    pub eps: Option<f64>,
    pub tail: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { dt: DEFAULT_DT, t_max: DEFAULT_T_MAX, eps: Some(DEFAULT_EPS), tail: 1.0 }
    }
}

impl SimOptions {
    pub fn fixed(dt: f64, t_max: f64) -> Self {
        SimOptions { dt, t_max, eps: None, tail: 0.0 }
    }
}

/// Classical RK4 for `x' = f(x, u)`, `u = control(x)`; `dynamics(x, u, out)` writes `x'`.
pub fn simulate<F, C>(dynamics: F, control: C, x0: &[f64], opts: &SimOptions) -> Result<Trajectory>
where
    F: Fn(&[f64], f64, &mut [f64]),
    C: Fn(&[f64]) -> f64,
{
    let dt = opts.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt = {dt} must be positive")));
    }
    if !(opts.t_max >= dt) {
        return Err(invalid(format!("t_max = {} must be at least dt = {dt}", opts.t_max)));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { last_finite: 0 });
    }
    let n = x0.len();
    let steps = (opts.t_max / dt).round() as usize;
    let tail_steps = (opts.tail / dt).round() as usize;

    let mut times = vec![0.0];
    let mut states = vec![x0.to_vec()];
    let mut controls = vec![control(x0)];
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stop_at: Option<usize> = None;
    if let Some(eps) = opts.eps {
        if norm(&x) <= eps {
            stop_at = Some(tail_steps);
        }
    }

    for step in 1..=steps {
        if stop_at.is_some_and(|s| step > s) {
            break;
        }
        dynamics(&x, control(&x), &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        dynamics(&tmp, control(&tmp), &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        dynamics(&tmp, control(&tmp), &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        dynamics(&tmp, control(&tmp), &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let u = control(&x);
        if x.iter().any(|v| !v.is_finite()) || !u.is_finite() {
            return Err(Error::Divergence { last_finite: step - 1 });
        }
        times.push(step as f64 * dt);
        states.push(x.clone());
        controls.push(u);
        if stop_at.is_none() {
            if let Some(eps) = opts.eps {
                if norm(&x) <= eps {
                    stop_at = Some(step + tail_steps);
                }
            }
        }
    }
    Ok(Trajectory { dt, times, states, controls, x0: x0.to_vec(), meta: String::new() })
}

/// `x_i' = x_{i+1}`, `x_n' = u`.
pub fn integrator_chain(x: &[f64], u: f64, out: &mut [f64]) {
    let n = x.len();
    out[..n - 1].copy_from_slice(&x[1..]);
    out[n - 1] = u;
}

/// `x' = A x + b u` with `A` given by rows.
pub fn linear_system<'a>(a: &'a [Vec<f64>], b: &'a [f64]) -> impl Fn(&[f64], f64, &mut [f64]) + 'a {
    move |x, u, out| {
        for (i, row) in a.iter().enumerate() {
            out[i] = row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b[i] * u;
        }
    }
}

/// Samples lost at each end by the order-`j` central stencil.
pub fn stencil_half_width(j: u32) -> usize {
    match j {
        0 => 0,
        1 | 2 => 1,
        _ => 2,
    }
}

/// Second-order central differences; `out[k]` estimates the `j`-th derivative at
/// sample `k + stencil_half_width(j)`.
pub fn finite_diff(signal: &[f64], dt: f64, j: u32) -> Result<Vec<f64>> {
    if j > 4 {
        return Err(invalid(format!("finite differences support orders up to 4, got {j}")));
    }
    if !(dt > 0.0) {
        return Err(invalid(format!("dt = {dt} must be positive")));
    }
    let w = stencil_half_width(j);
    if signal.len() < 2 * w + 1 {
        return Err(invalid(format!("order {j} needs at least {} samples, got {}", 2 * w + 1, signal.len())));
    }
    let f = signal;
    let out = (w..f.len() - w)
        .map(|i| match j {
            0 => f[i],
            1 => (f[i + 1] - f[i - 1]) / (2.0 * dt),
            2 => (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (dt * dt),
            3 => (f[i + 2] - 2.0 * f[i + 1] + 2.0 * f[i - 1] - f[i - 2]) / (2.0 * dt.powi(3)),
            _ => (f[i + 2] - 4.0 * f[i + 1] + 6.0 * f[i] - 4.0 * f[i - 1] + f[i - 2]) / dt.powi(4),
        })
        .collect();
    Ok(out)
}

/// CSV with header `t,x_1,...,x_n,u` and 17 significant digits.
pub fn write_csv<W: Write>(traj: &Trajectory, mut w: W) -> std::io::Result<()> {
    let n = traj.dim();
    let mut header = String::from("t");
    for i in 1..=n {
        write!(header, ",x_{i}").unwrap();
    }
    header.push_str(",u\n");
    w.write_all(header.as_bytes())?;
    let mut line = String::new();
    for k in 0..traj.len() {
        line.clear();
        write!(line, "{:.16e}", traj.times[k]).unwrap();
        for v in &traj.states[k] {
            write!(line, ",{v:.16e}").unwrap();
        }
        writeln!(line, ",{:.16e}", traj.controls[k]).unwrap();
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Parses [`write_csv`] output; `dt` is taken from the first two rows.
pub fn read_csv<R: Read>(r: R) -> Result<Trajectory> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty trajectory file".into()))?
        .map_err(|e| Error::Parse(e.to_string()))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let n = cols.len().saturating_sub(2);
    let well_formed = cols.len() >= 3
        && cols[0] == "t"
        && cols[cols.len() - 1] == "u"
        && (1..=n).all(|i| cols[i] == format!("x_{i}"));
    if !well_formed {
        return Err(Error::Parse(format!("unexpected header `{}`", header.trim())));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .trim()
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))?;
        if vals.len() != n + 2 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("row {}: expected {} finite values", lineno + 2, n + 2)));
        }
        times.push(vals[0]);
        states.push(vals[1..=n].to_vec());
        controls.push(vals[n + 1]);
    }
    if times.is_empty() {
        return Err(Error::Parse("trajectory has no rows".into()));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { DEFAULT_DT };
    if !(dt > 0.0) {
        return Err(Error::Parse("time column is not increasing".into()));
    }
    Ok(Trajectory { dt, x0: states[0].clone(), times, states, controls, meta: String::new() })
}
