use std::fmt::{self, Write as _};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ratebound_core::integrator::{derivative_bound_polynomials, ChainSpec};
use ratebound_core::simulation::{read_csv, write_csv, SimOptions, Trajectory};
use ratebound_core::skew::SAMPLE_SIZE;
use ratebound_core::verification::{counterexample_demo, CounterexampleKind, DerivativeEvaluator};
use ratebound_core::{
    verify_bounds, verify_convergence, BoundReport, ConvergenceReport, Controller, Error, NestedSatController,
    SkewController, ToolkitConfig,
};

use crate::{Common, Example};

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// A core error raised inside a named pipeline stage.
    Stage(&'static str, Error),
    Io(String),
    Bounds(String),
    Convergence(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        let core = |e: &Error| match e {
            Error::Config { .. } => 2,
            Error::Infeasible(_) | Error::CertificationFailed { .. } | Error::Uncontrollable { .. } => 3,
            Error::Divergence { .. } => 4,
            Error::Parse(_) => 6,
            _ => 1,
        };
        match self {
            Failure::Core(e) | Failure::Stage(_, e) => core(e),
            Failure::Io(_) => 1,
            Failure::Bounds(_) => 5,
            Failure::Convergence(_) => 7,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Stage(stage, e) => write!(f, "stage `{stage}` failed: {e}"),
            Failure::Io(m) | Failure::Bounds(m) | Failure::Convergence(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn out_dir(common: &Common) -> std::result::Result<PathBuf, Failure> {
    let dir = std::env::var_os("TOOLKIT_OUT")
        .map(PathBuf::from)
        .or_else(|| common.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn load_config(common: &Common) -> std::result::Result<ToolkitConfig, Failure> {
    let path = common.config.as_ref().ok_or_else(|| {
        Failure::Core(Error::Config { path: "--config".into(), message: "a configuration file is required".into() })
    })?;
    let mut cfg = ToolkitConfig::from_toml(&read_text(path)?)?;
    apply_overrides(&mut cfg, common);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ToolkitConfig, common: &Common) {
    if let Some(dt) = common.dt {
        cfg.simulation.dt = dt;
    }
    if let Some(t) = common.tmax {
        cfg.simulation.t_max = t;
    }
    if let Some(eps) = common.eps {
        cfg.simulation.eps = eps;
    }
}

fn load_controller(path: &Path) -> std::result::Result<Controller, Failure> {
    Ok(Controller::from_toml(&read_text(path)?)?)
}

pub fn synthesis_log(ctrl: &Controller) -> std::result::Result<String, Failure> {
    match ctrl {
        Controller::IntegratorChain(c) => chain_log(c),
        Controller::Skew(k) => Ok(skew_log(k)),
    }
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", items.join(", "))
}

fn chain_log(c: &NestedSatController) -> std::result::Result<String, Failure> {
    let mut s = String::new();
    writeln!(s, "kind = integrator-chain").unwrap();
    writeln!(s, "n = {}, p = {}", c.n, c.p).unwrap();
    writeln!(s, "bounds = {}", fmt_list(&c.bounds)).unwrap();
    writeln!(s, "mu_max = {}", fmt_list(&c.mu.mu_max)).unwrap();
    writeln!(s, "L_mu = {}", fmt_list(&c.mu.l_mu)).unwrap();
    writeln!(s, "alpha_tilde = {:.6e}", c.alpha_tilde).unwrap();
    writeln!(s, "lambda = {:.6e}", c.lambda).unwrap();
    writeln!(s, "a = {}", fmt_list(&c.a)).unwrap();
    for (i, k) in c.k.iter().enumerate() {
        writeln!(s, "k_{} = {}", i + 1, fmt_list(k)).unwrap();
    }
    let spec = ChainSpec::new(c.n, c.p, c.bounds.clone(), c.sigmas.clone())?;
    let polys = derivative_bound_polynomials(&spec, &c.mu)?;
    for j in 1..=c.p {
        let poly = polys.rate_bound(j)?;
        let terms: Vec<String> = poly
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(q, v)| format!("{v:.6e}/lambda^{q}"))
            .collect();
        writeln!(
            s,
            "sup|U^({j})| <= {} = {:.6e} at lambda (limit {:.6e})",
            terms.join(" + "),
            poly.eval(c.lambda),
            c.bounds[j as usize]
        )
        .unwrap();
    }
    Ok(s)
}

fn skew_log(k: &SkewController) -> String {
    let mut s = String::new();
    writeln!(s, "kind = skew").unwrap();
    writeln!(s, "n = {}, p = {}", k.n(), k.p()).unwrap();
    writeln!(s, "bounds = {}", fmt_list(&k.system.bounds)).unwrap();
    writeln!(s, "alpha = {:.6e}", k.system.alpha).unwrap();
    writeln!(s, "beta = {:.17e}", k.beta).unwrap();
    writeln!(s, "K = {:.6e}", k.k).unwrap();
    writeln!(s, "lyapunov_residual = {:.3e}", k.lyapunov_residual()).unwrap();
    writeln!(s, "certification sample = {SAMPLE_SIZE} Halton states").unwrap();
    for (j, (sup, lim)) in k.certified.iter().zip(&k.system.bounds).enumerate() {
        writeln!(s, "sup|U^({j})| <= {sup:.6e} (limit {lim:.6e})").unwrap();
    }
    s
}

pub fn synthesize(common: &Common) -> Outcome {
    let cfg = load_config(common)?;
    let ctrl = cfg.synthesize()?;
    let dir = out_dir(common)?;
    write_text(&dir.join("controller.toml"), &ctrl.to_toml()?)?;
    let log = synthesis_log(&ctrl)?;
    write_text(&dir.join("synthesis.log"), &log)?;
    print!("{log}");
    println!("wrote {}", dir.join("controller.toml").display());
    Ok(())
}

pub fn trajectory_name(index: usize) -> String {
    format!("trajectory_{index:03}.csv")
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Outcome {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_csv(traj, BufWriter::new(file)).map_err(|e| io_err(path, e))
}

pub fn simulate(common: &Common, controller: Option<&Path>) -> Outcome {
    let cfg = load_config(common)?;
    let ctrl = match controller {
        Some(p) => load_controller(p)?,
        None => cfg.synthesize()?,
    };
    let n = cfg.dim()?;
    if ctrl.dim() != n {
        return Err(Error::Config {
            path: "kind".into(),
            message: format!("controller has dimension {}, configuration has {n}", ctrl.dim()),
        }
        .into());
    }
    let states = cfg.initial_states(common.seed)?;
    if states.is_empty() {
        return Err(Error::Config {
            path: "initial_conditions".into(),
            message: "no initial conditions (give points or random > 0)".into(),
        }
        .into());
    }
    let dir = out_dir(common)?;
    let opts = cfg.simulation.options();
    let results: Vec<std::result::Result<(), (usize, Failure)>> = states
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let traj = ctrl.simulate(x0, &opts).map_err(|e| (i, e.into()))?;
            write_trajectory(&dir.join(trajectory_name(i)), &traj).map_err(|e| (i, e))
        })
        .collect();

    let mut first = None;
    for r in results {
        if let Err((i, f)) = r {
            eprintln!("initial condition {i} {:?}: {f}", states[i]);
            first.get_or_insert(f);
        }
    }
    if let Some(f) = first {
        return Err(f);
    }
    println!("wrote {} trajectories to {}", states.len(), dir.display());
    Ok(())
}

struct Verdict {
    text: String,
    bounds_ok: bool,
    converged: bool,
}

fn judge(name: &str, traj: &Trajectory, ctrl: &Controller, limits: &[f64], eps: f64) -> Result<Verdict, Error> {
    let bounds = verify_bounds(traj, ctrl, limits)?;
    let conv = verify_convergence(traj, eps)?;
    Ok(Verdict { text: report_block(name, traj, &bounds, &conv), bounds_ok: bounds.pass(), converged: conv.converged })
}

fn report_block(name: &str, traj: &Trajectory, bounds: &BoundReport, conv: &ConvergenceReport) -> String {
    let mut s = format!("[{name}]\nsamples={}\nt_end={:.6e}\n", traj.len(), traj.times.last().copied().unwrap_or(0.0));
    s.push_str(&bounds.to_text());
    writeln!(s, "convergence.t_eps={}", conv.t_eps.map_or("na".into(), |t| format!("{t:.6e}"))).unwrap();
    writeln!(s, "convergence.final_norm={:.6e}", conv.final_norm).unwrap();
    writeln!(s, "convergence.pass={}", conv.converged).unwrap();
    s
}

pub fn verify(common: &Common, controller: &Path, limits: Option<Vec<f64>>, trajectories: &[PathBuf]) -> Outcome {
    let ctrl = load_controller(controller)?;
    let cfg = match &common.config {
        Some(_) => Some(load_config(common)?),
        None => None,
    };
    let limits = limits
        .or_else(|| cfg.as_ref().map(ToolkitConfig::limits))
        .unwrap_or_else(|| ctrl.bounds().to_vec());
    let eps = common.eps.or(cfg.as_ref().map(|c| c.simulation.eps)).unwrap_or(ratebound_core::simulation::DEFAULT_EPS);

    let mut text = format!("controller={}\nlimits={}\neps={eps:.6e}\n", controller.display(), fmt_list(&limits));
    let mut bounds_ok = true;
    let mut converged = true;
    for path in trajectories {
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        let traj = read_csv(std::io::BufReader::new(file))
            .map_err(|e| match e {
            Error::Parse(m) => Failure::Core(Error::Parse(format!("{}: {m}", path.display()))),
            other => Failure::Core(other),
        })?;
        let v = judge(&path.display().to_string(), &traj, &ctrl, &limits, eps)?;
        text.push('\n');
        text.push_str(&v.text);
        bounds_ok &= v.bounds_ok;
        converged &= v.converged;
    }
    writeln!(text, "\nall.bounds.pass={bounds_ok}\nall.convergence.pass={converged}").unwrap();

    let dir = match std::env::var_os("TOOLKIT_OUT").map(PathBuf::from).or_else(|| common.out.clone()) {
        Some(_) => out_dir(common)?,
        None => trajectories[0].parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let report = dir.join("verify_report.txt");
    write_text(&report, &text)?;
    println!("bounds: {}, convergence: {}; report {}", pass_word(bounds_ok), pass_word(converged), report.display());
    if !bounds_ok {
        return Err(Failure::Bounds(format!("derivative bound exceeded; see {}", report.display())));
    }
    if !converged {
        return Err(Failure::Convergence(format!("trajectory did not converge; see {}", report.display())));
    }
    Ok(())
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// `t, x_1..x_n, U, U^(1), ...` with analytic derivatives.
fn plot_csv(traj: &Trajectory, ctrl: &Controller) -> Result<String, Error> {
    let n = traj.dim();
    let p = ctrl.max_order();
    let mut s = String::from("t");
    for i in 1..=n {
        write!(s, ",x_{i}").unwrap();
    }
    s.push_str(",u");
    for j in 1..=p {
        write!(s, ",u_d{j}").unwrap();
    }
    s.push('\n');
    for (t, x) in traj.times.iter().zip(&traj.states) {
        write!(s, "{t:.9e}").unwrap();
        for v in x {
            write!(s, ",{v:.9e}").unwrap();
        }
        for u in ctrl.u_derivatives(x, p)? {
            write!(s, ",{u:.9e}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

fn reproduce_preset(common: &Common, name: &str, mut cfg: ToolkitConfig) -> Outcome {
    apply_overrides(&mut cfg, common);
    cfg.validate().map_err(|e| Failure::Stage("config", e))?;
    let ctrl = cfg.synthesize().map_err(|e| Failure::Stage("synthesize", e))?;
    let x0 = cfg.initial_states(common.seed).map_err(|e| Failure::Stage("config", e))?.remove(0);
    let opts: SimOptions = cfg.simulation.options();
    let traj = ctrl.simulate(&x0, &opts).map_err(|e| Failure::Stage("simulate", e))?;
    let limits = cfg.limits();
    let verdict = judge(name, &traj, &ctrl, &limits, cfg.simulation.eps).map_err(|e| Failure::Stage("verify", e))?;

    let dir = out_dir(common)?;
    write_text(&dir.join(format!("{name}_controller.toml")), &ctrl.to_toml()?)?;
    let log = synthesis_log(&ctrl)?;
    write_text(&dir.join(format!("{name}_synthesis.log")), &log)?;
    write_trajectory(&dir.join(format!("{name}_trajectory.csv")), &traj)?;
    let plot = plot_csv(&traj, &ctrl).map_err(|e| Failure::Stage("plot", e))?;
    write_text(&dir.join(format!("{name}_plot.csv")), &plot)?;
    let report = format!("{log}\ninitial_state={}\n{}", fmt_list(&x0), verdict.text);
    write_text(&dir.join(format!("{name}_report.txt")), &report)?;

    print!("{report}");
    if !verdict.bounds_ok {
        return Err(Failure::Bounds(format!("{name}: derivative bound exceeded")));
    }
    if !verdict.converged {
        return Err(Failure::Convergence(format!("{name}: no convergence within t_max = {}", opts.t_max)));
    }
    Ok(())
}

fn reproduce_counterexamples(common: &Common) -> Outcome {
    let mags: Vec<f64> = (0..=12).map(|i| 10f64.powf(i as f64 / 4.0)).collect();
    let dir = out_dir(common)?;
    let mut report = String::new();
    for kind in [CounterexampleKind::LinearCombinationDoubleIntegrator, CounterexampleKind::PureSaturationOscillator] {
        let table = counterexample_demo(kind, &mags).map_err(|e| Failure::Stage("counterexample", e))?;
        write_text(&dir.join(format!("counterexample_{}.csv", kind.name())), &table.to_csv())?;
        writeln!(report, "[{}]", kind.name()).unwrap();
        for (m, v) in &table.rows {
            writeln!(report, "magnitude={m:.4e} abs_u_dot_0={v:.6e}").unwrap();
        }
        writeln!(
            report,
            "linear fit slope={:.6} intercept={:.6} r_squared={:.6}\n",
            table.slope, table.intercept, table.r_squared
        )
        .unwrap();
    }
    write_text(&dir.join("counterexamples_report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

pub fn reproduce(common: &Common, example: Example) -> Outcome {
    match example {
        Example::TripleIntegrator => reproduce_preset(common, "triple_integrator", ToolkitConfig::triple_integrator()),
        Example::HarmonicOscillator => {
            reproduce_preset(common, "harmonic_oscillator", ToolkitConfig::harmonic_oscillator())
        }
        Example::Counterexamples => reproduce_counterexamples(common),
    }
}
