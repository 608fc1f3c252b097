//! Trajectory-level checks: derivative bounds, convergence, saturation entry
//! times, Lyapunov decrease, and the unbounded-rate counterexamples.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::integrator::NestedSatController;
use crate::saturation::{make_paper_example_saturation, SaturationSpec};
use crate::simulation::{finite_diff, norm, stencil_half_width, Trajectory};
use crate::skew::SkewController;

/// Relative and absolute tolerances of the analytic / finite-difference cross-check.
pub const CROSS_CHECK_REL: f64 = 1e-3;
pub const CROSS_CHECK_ABS: f64 = 1e-6;

/// Closed-form time derivatives of the control along the closed loop.
pub trait DerivativeEvaluator: Sync {
    fn dim(&self) -> usize;
    fn max_order(&self) -> u32;
    /// `U^(0..=up_to)` at state `x`.
    fn u_derivatives(&self, x: &[f64], up_to: u32) -> Result<Vec<f64>>;
    /// Identifies the smooth piece of the feedback containing `x`; finite
    /// differences are only compared where a whole stencil shares one key.
    fn region_key(&self, _x: &[f64]) -> Vec<usize> {
        Vec::new()
    }
}

impl DerivativeEvaluator for NestedSatController {
    fn dim(&self) -> usize {
        self.n
    }
    fn max_order(&self) -> u32 {
        self.p
    }
    fn u_derivatives(&self, x: &[f64], up_to: u32) -> Result<Vec<f64>> {
        self.chain_u_derivatives(x, up_to)
    }
    fn region_key(&self, x: &[f64]) -> Vec<usize> {
        let y = self.to_y(x);
        let mut keys = Vec::with_capacity(self.n);
        let mut z = y[0];
        for i in 1..=self.n {
            if i > 1 {
                z = y[i - 1] + self.level(i - 1).value(z);
            }
            keys.push(self.level(i).region(z));
        }
        keys
    }
}

impl DerivativeEvaluator for SkewController {
    fn dim(&self) -> usize {
        self.n()
    }
    fn max_order(&self) -> u32 {
        self.p()
    }
    fn u_derivatives(&self, x: &[f64], up_to: u32) -> Result<Vec<f64>> {
        Ok(self.state_derivatives(x, up_to as usize)?.u)
    }
}

/// One derivative order of a [`BoundReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub order: u32,
    pub limit: f64,
    pub analytic_sup: f64,
    pub analytic_argmax_t: f64,
    /// Grid sup plus `dt/2` times the grid sup of the next order, when that order is available.
    pub padded_sup: Option<f64>,
    pub fd_sup: Option<f64>,
    pub fd_argmax_t: Option<f64>,
    /// Largest `|fd - analytic| / max(rel |analytic|, abs)` over compared samples.
    pub cross_check_ratio: Option<f64>,
    pub cross_check_samples: usize,
    pub pass: bool,
}

impl OrderReport {
    pub fn cross_check_pass(&self) -> bool {
        self.cross_check_ratio.map_or(true, |r| r <= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub orders: Vec<OrderReport>,
}

impl BoundReport {
    pub fn pass(&self) -> bool {
        self.orders.iter().all(|o| o.pass)
    }

    pub fn cross_check_pass(&self) -> bool {
        self.orders.iter().all(OrderReport::cross_check_pass)
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for o in &self.orders {
            let j = o.order;
            let opt = |v: Option<f64>| v.map_or("na".to_string(), |v| format!("{v:.6e}"));
            writeln!(s, "order{j}.limit={:.6e}", o.limit).unwrap();
            writeln!(s, "order{j}.analytic_sup={:.6e}", o.analytic_sup).unwrap();
            writeln!(s, "order{j}.analytic_argmax_t={:.6e}", o.analytic_argmax_t).unwrap();
            writeln!(s, "order{j}.padded_sup={}", opt(o.padded_sup)).unwrap();
            writeln!(s, "order{j}.fd_sup={}", opt(o.fd_sup)).unwrap();
            writeln!(s, "order{j}.fd_argmax_t={}", opt(o.fd_argmax_t)).unwrap();
            writeln!(s, "order{j}.cross_check_ratio={}", opt(o.cross_check_ratio)).unwrap();
            writeln!(s, "order{j}.pass={}", o.pass).unwrap();
        }
        writeln!(s, "bounds.pass={}", self.pass()).unwrap();
        s
    }
}

fn argmax_abs(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold((0, 0.0), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
}

/// Measures `sup_t |U^(j)(t)|`, `j = 0..limits.len()-1`, analytically on every
/// sample and by finite differences of the recorded control, and compares the
/// analytic sup with `limits[j]`.
pub fn verify_bounds<E: DerivativeEvaluator + ?Sized>(
    traj: &Trajectory,
    eval: &E,
    limits: &[f64],
) -> Result<BoundReport> {
    use rayon::prelude::*;
    if traj.dim() != eval.dim() {
        return Err(invalid(format!("trajectory has dimension {}, evaluator {}", traj.dim(), eval.dim())));
    }
    if limits.is_empty() || limits.len() > eval.max_order() as usize + 1 {
        return Err(invalid(format!("need 1..={} limits, got {}", eval.max_order() + 1, limits.len())));
    }
    let top = (limits.len() as u32).min(eval.max_order() + 1) - 1;
    // evaluate one order beyond the limits when possible, for padding
    let eval_order = (top + 1).min(eval.max_order());
    let analytic: Vec<Vec<f64>> = traj
        .states
        .par_iter()
        .map(|x| eval.u_derivatives(x, eval_order))
        .collect::<Result<_>>()?;
    let keys: Vec<Vec<usize>> = traj.states.par_iter().map(|x| eval.region_key(x)).collect();

    let mut orders = Vec::new();
    for j in 0..=top {
        let col: Vec<f64> = analytic.iter().map(|u| u[j as usize]).collect();
        let (k, sup) = argmax_abs(&col);
        let padded_sup = (j < eval_order).then(|| {
            let next = analytic.iter().map(|u| u[j as usize + 1].abs()).fold(0.0, f64::max);
            sup + 0.5 * traj.dt * next
        });
        let (mut fd_sup, mut fd_argmax_t, mut ratio, mut samples) = (None, None, None, 0);
        let w = stencil_half_width(j);
        if j <= 4 && traj.len() > 2 * w {
            let fd = finite_diff(&traj.controls, traj.dt, j)?;
            let (fk, fs) = argmax_abs(&fd);
            fd_sup = Some(fs);
            fd_argmax_t = Some(traj.times[fk + w]);
            if (1..=2).contains(&j) {
                let mut worst: f64 = 0.0;
                for (i, v) in fd.iter().enumerate() {
                    let c = i + w;
                    if (c - w..=c + w).any(|m| keys[m] != keys[c]) {
                        continue;
                    }
                    let a = col[c];
                    let scale = (CROSS_CHECK_REL * a.abs()).max(CROSS_CHECK_ABS);
                    worst = worst.max((v - a).abs() / scale);
                    samples += 1;
                }
                if samples > 0 {
                    ratio = Some(worst);
                }
            }
        }
        orders.push(OrderReport {
            order: j,
            limit: limits[j as usize],
            analytic_sup: sup,
            analytic_argmax_t: traj.times[k],
            padded_sup,
            fd_sup,
            fd_argmax_t,
            cross_check_ratio: ratio,
            cross_check_samples: samples,
            pass: sup <= limits[j as usize],
        });
    }
    Ok(BoundReport { orders })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// First grid time after which `|x| <= eps` holds on every remaining sample.
    pub t_eps: Option<f64>,
    pub final_norm: f64,
}

pub fn verify_convergence(traj: &Trajectory, eps: f64) -> Result<ConvergenceReport> {
    if !(eps > 0.0) {
        return Err(invalid(format!("eps = {eps} must be positive")));
    }
    let norms = traj.norms();
    let mut first = None;
    for (k, r) in norms.iter().enumerate().rev() {
        if *r <= eps {
            first = Some(k);
        } else {
            break;
        }
    }
    Ok(ConvergenceReport {
        converged: first.is_some(),
        t_eps: first.map(|k| traj.times[k]),
        final_norm: norms.last().copied().unwrap_or(0.0),
    })
}

/// `T_1 <= ... <= T_n`: level `i` has entered once `|y_{n-i+1}| <= L_{mu_{n-i+1}}/2`
/// holds for the rest of the run. `None` marks a level that never enters.
pub fn saturation_entry_times(traj: &Trajectory, ctrl: &NestedSatController) -> Result<Vec<Option<f64>>> {
    if traj.dim() != ctrl.n {
        return Err(invalid(format!("trajectory has dimension {}, controller {}", traj.dim(), ctrl.n)));
    }
    let ys: Vec<Vec<f64>> = traj.states.iter().map(|x| ctrl.to_y(x)).collect();
    let mut out = Vec::with_capacity(ctrl.n);
    let mut floor: Option<f64> = Some(0.0);
    for (coord, thr) in ctrl.entry_thresholds() {
        let mut first = None;
        for k in (0..ys.len()).rev() {
            if ys[k][coord].abs() <= thr {
                first = Some(k);
            } else {
                break;
            }
        }
        let t = match (first, floor) {
            (Some(k), Some(f)) => Some(traj.times[k].max(f)),
            _ => None,
        };
        floor = t;
        out.push(t);
    }
    Ok(out)
}

/// `max |nu(x) - linear_law(x)|` over samples with `t >= t_from`.
pub fn linear_tail_deviation(traj: &Trajectory, ctrl: &NestedSatController, t_from: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        if *t >= t_from {
            worst = worst.max((ctrl.eval_nested_feedback(x)? - ctrl.linear_law(x)?).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub pass: bool,
    /// Largest `V'_fd + |x|^2/2 - tol(x)` (non-positive on success).
    pub max_violation: f64,
    pub checked: usize,
}

/// Tolerance of the sampled decrease check.
pub fn lyapunov_tolerance(x: &[f64]) -> f64 {
    1e-4 * (1.0 + x.iter().map(|v| v * v).sum::<f64>())
}

/// Central-difference `V'` at interior samples against `-|x|^2/2 + tol`.
pub fn lyapunov_check(traj: &Trajectory, ctrl: &SkewController) -> Result<LyapunovReport> {
    if traj.dim() != ctrl.n() {
        return Err(invalid(format!("trajectory has dimension {}, controller {}", traj.dim(), ctrl.n())));
    }
    let v: Vec<f64> = traj.states.iter().map(|x| ctrl.lyapunov(x)).collect();
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    if traj.len() >= 3 {
        let vd = finite_diff(&v, traj.dt, 1)?;
        for (i, d) in vd.iter().enumerate() {
            let x = &traj.states[i + 1];
            let r2 = norm(x).powi(2);
            worst = worst.max(d + r2 / 2.0 - lyapunov_tolerance(x));
            checked += 1;
        }
    }
    if checked == 0 {
        worst = 0.0;
    }
    Ok(LyapunovReport { pass: worst <= 0.0, max_violation: worst, checked })
}

/// The two rate-unbounded feedbacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterexampleKind {
    /// `nu = -a sigma_1(b x_2) - c sigma_2(d (x_1 + x_2))` on the double integrator,
    /// started at `x_1 = -m`, `x_2 = m`.
    LinearCombinationDoubleIntegrator,
    /// `u = -sigma(x_2)` on `x_1' = x_2`, `x_2' = -x_1 + u`, started at `x_1 = m` with
    /// `x_2` inside the linear zone.
    PureSaturationOscillator,
}

impl CounterexampleKind {
    pub fn name(self) -> &'static str {
        match self {
            CounterexampleKind::LinearCombinationDoubleIntegrator => "linear-combination-double-integrator",
            CounterexampleKind::PureSaturationOscillator => "pure-saturation-oscillator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoTable {
    pub kind: CounterexampleKind,
    /// `(magnitude, |U'(0)|)`
    pub rows: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl DemoTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("magnitude,abs_u_dot_0\n");
        for (m, v) in &self.rows {
            writeln!(s, "{m:.16e},{v:.16e}").unwrap();
        }
        s
    }
}

/// Least-squares line `y = slope x + intercept` and its `R^2`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

fn demo_value(kind: CounterexampleKind, sigma: &SaturationSpec, m: f64) -> f64 {
    let d1 = |r: f64| sigma.eval(r, 1).expect("sigma is at least C^1");
    match kind {
        CounterexampleKind::LinearCombinationDoubleIntegrator => {
            let (a, b, c, d) = (1.0, 1.0, 1.0, 1.0);
            let (x1, x2) = (-m, m);
            let u = -a * sigma.value(b * x2) - c * sigma.value(d * (x1 + x2));
            // U' = -a b sigma_1'(b x_2) U - c d sigma_2'(d (x_1 + x_2)) (x_2 + U)
            (-a * b * d1(b * x2) * u - c * d * d1(d * (x1 + x2)) * (x2 + u)).abs()
        }
        CounterexampleKind::PureSaturationOscillator => {
            let (x1, x2) = (m, 0.5 * sigma.l());
            let u = -sigma.value(x2);
            // U' = -sigma'(x_2) (-x_1 + U)
            (-d1(x2) * (-x1 + u)).abs()
        }
    }
}

/// `|U'(0)|` over the initial-condition family of `kind`, with a linear fit.
pub fn counterexample_demo(kind: CounterexampleKind, magnitudes: &[f64]) -> Result<DemoTable> {
    if magnitudes.is_empty() || magnitudes.iter().any(|m| !(*m > 0.0)) {
        return Err(invalid("magnitudes must be positive"));
    }
    if magnitudes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("magnitudes must be increasing"));
    }
    let sigma = make_paper_example_saturation();
    let rows: Vec<(f64, f64)> = magnitudes.iter().map(|&m| (m, demo_value(kind, &sigma, m))).collect();
    let (slope, intercept, r_squared) = linear_fit(&rows);
    Ok(DemoTable { kind, rows, slope, intercept, r_squared })
}
