//! TOML problem configuration.
//!
//! ```toml
//! kind = "integrator-chain"        # or "skew"
//! p = 2
//! bounds = [2.0, 20.0, 18.0]       # R_0..R_p
//!
//! [chain]
//! n = 3
//! saturation = { kind = "preset", name = "paper-example" }
//! mu_max = [0.0833, 0.4]           # optional, mu_1..mu_{n-1}
//! lambda = 6.5                     # optional, otherwise the certified lambda
//!
//! [skew]
//! a = [[0.0, 5.0], [-5.0, 0.0]]
//! b = [0.0, 1.0]
//! alpha = 0.5
//! beta = 0.35                      # optional, otherwise the certification grid
//!
//! [simulation]
//! dt = 1e-3
//! t_max = 1e4
//! eps = 1e-2
//!
//! [initial_conditions]
//! points = [[446.7937, -69.875, 11.05]]
//! random = 10                      # extra random states
//! radius = 5.0
//! seed = 0
//!
//! [verification]
//! limits = [2.0, 0.9, 18.0]        # optional, defaults to bounds
//! ```

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::integrator::{synthesize, ChainSpec, SynthesisOverrides};
use crate::saturation::{make_hermite_saturation, make_paper_example_saturation, SaturationData, SaturationSpec};
use crate::simulation::{SimOptions, DEFAULT_DT, DEFAULT_EPS, DEFAULT_T_MAX};
use crate::skew::{certify_at, certify_beta, validate_system, CertificationSample, SkewSystem, SAMPLE_SIZE};

/// Names accepted by `{ kind = "preset", name = ... }`.
pub const SATURATION_PRESETS: &[&str] = &["paper-example"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    IntegratorChain,
    Skew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    pub kind: ProblemKind,
    pub p: u32,
    pub bounds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew: Option<SkewConfig>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub initial_conditions: InitialConditions,
    #[serde(default)]
    pub verification: VerificationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SaturationChoice {
    Preset { name: String },
    Hermite { p: u32, sigma_max: f64, l: f64, alpha: f64 },
    Explicit(SaturationData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub n: usize,
    /// Used on every level unless `saturations` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<SaturationChoice>,
    /// One entry per level, `sigma_1..sigma_n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturations: Option<Vec<SaturationChoice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}
fn default_eps() -> f64 {
    DEFAULT_EPS
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { dt: DEFAULT_DT, t_max: DEFAULT_T_MAX, eps: DEFAULT_EPS }
    }
}

impl SimulationConfig {
    pub fn options(&self) -> SimOptions {
        SimOptions { dt: self.dt, t_max: self.t_max, eps: Some(self.eps), ..SimOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    /// Number of additional states drawn uniformly from the ball of `radius`.
    #[serde(default)]
    pub random: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_radius() -> f64 {
    1.0
}

impl Default for InitialConditions {
    fn default() -> Self {
        InitialConditions { points: Vec::new(), random: 0, radius: default_radius(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<Vec<f64>>,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

fn check_positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(path, format!("must be positive and finite, got {v}")))
    }
}

impl SaturationChoice {
    pub fn build(&self, path: &str) -> Result<SaturationSpec> {
        let wrap = |e: Error| config_err(path, e.to_string());
        match self {
            SaturationChoice::Preset { name } => match name.as_str() {
                "paper-example" => Ok(make_paper_example_saturation()),
                other => Err(config_err(
                    format!("{path}.name"),
                    format!("unknown preset `{other}` (known: {})", SATURATION_PRESETS.join(", ")),
                )),
            },
            SaturationChoice::Hermite { p, sigma_max, l, alpha } => {
                make_hermite_saturation(*p, *sigma_max, *l, *alpha).map_err(wrap)
            }
            SaturationChoice::Explicit(data) => SaturationSpec::try_from(data.clone()).map_err(wrap),
        }
    }
}

impl ToolkitConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ToolkitConfig = toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_else(|| "<root>".into());
            config_err(span, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("cannot serialize config: {e}")))
    }

    /// State dimension implied by the problem section.
    pub fn dim(&self) -> Result<usize> {
        match self.kind {
            ProblemKind::IntegratorChain => Ok(self.chain_section()?.n),
            ProblemKind::Skew => Ok(self.skew_section()?.b.len()),
        }
    }

    fn chain_section(&self) -> Result<&ChainConfig> {
        self.chain.as_ref().ok_or_else(|| config_err("chain", "missing [chain] section for kind = \"integrator-chain\""))
    }

    fn skew_section(&self) -> Result<&SkewConfig> {
        self.skew.as_ref().ok_or_else(|| config_err("skew", "missing [skew] section for kind = \"skew\""))
    }

    /// Cross-field consistency; numerical feasibility is left to synthesis.
    pub fn validate(&self) -> Result<()> {
        if self.bounds.len() != self.p as usize + 1 {
            return Err(config_err("bounds", format!("expected p + 1 = {} entries, got {}", self.p + 1, self.bounds.len())));
        }
        for (j, r) in self.bounds.iter().enumerate() {
            check_positive(&format!("bounds[{j}]"), *r)?;
        }
        let sim = &self.simulation;
        check_positive("simulation.dt", sim.dt)?;
        check_positive("simulation.t_max", sim.t_max)?;
        check_positive("simulation.eps", sim.eps)?;
        if sim.t_max < sim.dt {
            return Err(config_err("simulation.t_max", format!("must be at least dt = {}", sim.dt)));
        }
        if let Some(limits) = &self.verification.limits {
            if limits.len() != self.bounds.len() {
                return Err(config_err("verification.limits", format!("expected {} entries", self.bounds.len())));
            }
            for (j, r) in limits.iter().enumerate() {
                check_positive(&format!("verification.limits[{j}]"), *r)?;
            }
        }
        check_positive("initial_conditions.radius", self.initial_conditions.radius)?;
        let n = match self.kind {
            ProblemKind::IntegratorChain => {
                let c = self.chain_section()?;
                if c.n == 0 {
                    return Err(config_err("chain.n", "must be at least 1"));
                }
                match (&c.saturation, &c.saturations) {
                    (Some(s), None) => {
                        s.build("chain.saturation")?;
                    }
                    (None, Some(list)) => {
                        if list.len() != c.n {
                            return Err(config_err("chain.saturations", format!("expected n = {} entries", c.n)));
                        }
                        for (i, s) in list.iter().enumerate() {
                            s.build(&format!("chain.saturations[{i}]"))?;
                        }
                    }
                    _ => return Err(config_err("chain", "give exactly one of `saturation` or `saturations`")),
                }
                if let Some(mu) = &c.mu_max {
                    if mu.len() != c.n - 1 {
                        return Err(config_err("chain.mu_max", format!("expected n - 1 = {} entries", c.n - 1)));
                    }
                    for (i, v) in mu.iter().enumerate() {
                        check_positive(&format!("chain.mu_max[{i}]"), *v)?;
                    }
                }
                if let Some(l) = c.lambda {
                    if !(l >= 1.0 && l.is_finite()) {
                        return Err(config_err("chain.lambda", format!("must be >= 1, got {l}")));
                    }
                }
                c.n
            }
            ProblemKind::Skew => {
                let s = self.skew_section()?;
                let n = s.b.len();
                if n == 0 {
                    return Err(config_err("skew.b", "must not be empty"));
                }
                if s.a.len() != n {
                    return Err(config_err("skew.a", format!("expected {n} rows to match b")));
                }
                if let Some(i) = s.a.iter().position(|row| row.len() != n) {
                    return Err(config_err(format!("skew.a[{i}]"), format!("expected {n} columns")));
                }
                if !(s.alpha >= 0.5 && s.alpha.is_finite()) {
                    return Err(config_err("skew.alpha", format!("must be >= 1/2, got {}", s.alpha)));
                }
                if let Some(beta) = s.beta {
                    check_positive("skew.beta", beta)?;
                }
                n
            }
        };
        for (i, x) in self.initial_conditions.points.iter().enumerate() {
            if x.len() != n {
                return Err(config_err(
                    format!("initial_conditions.points[{i}]"),
                    format!("expected {n} components, got {}", x.len()),
                ));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(config_err(format!("initial_conditions.points[{i}]"), "must be finite"));
            }
        }
        Ok(())
    }

    pub fn chain_spec(&self) -> Result<ChainSpec> {
        let c = self.chain_section()?;
        let sigmas = match (&c.saturation, &c.saturations) {
            (Some(s), _) => vec![s.build("chain.saturation")?; c.n],
            (None, Some(list)) => list
                .iter()
                .enumerate()
                .map(|(i, s)| s.build(&format!("chain.saturations[{i}]")))
                .collect::<Result<_>>()?,
            (None, None) => return Err(config_err("chain", "give exactly one of `saturation` or `saturations`")),
        };
        ChainSpec::new(c.n, self.p, self.bounds.clone(), sigmas).map_err(|e| match e {
            Error::InvalidArgument(m) => config_err("chain", m),
            e => e,
        })
    }

    pub fn skew_system(&self) -> Result<SkewSystem> {
        let s = self.skew_section()?;
        validate_system(s.a.clone(), s.b.clone(), s.alpha, self.p, self.bounds.clone()).map_err(|e| match e {
            Error::InvalidArgument(m) | Error::Shape(m) => config_err("skew", m),
            e => e,
        })
    }

    /// Runs synthesis (chain) or certification (skew).
    pub fn synthesize(&self) -> Result<Controller> {
        match self.kind {
            ProblemKind::IntegratorChain => {
                let c = self.chain_section()?;
                let overrides = SynthesisOverrides { mu_max: c.mu_max.clone(), lambda: c.lambda };
                Ok(Controller::IntegratorChain(synthesize(&self.chain_spec()?, &overrides)?))
            }
            ProblemKind::Skew => {
                let sys = self.skew_system()?;
                let ctrl = match self.skew_section()?.beta {
                    Some(beta) => certify_at(&sys, beta, &CertificationSample::halton(sys.n(), SAMPLE_SIZE))?,
                    None => certify_beta(&sys)?,
                };
                Ok(Controller::Skew(ctrl))
            }
        }
    }

    /// `points` followed by `random` states drawn uniformly from the ball of
    /// `radius`; `seed` replaces the configured seed.
    pub fn initial_states(&self, seed: Option<u64>) -> Result<Vec<Vec<f64>>> {
        let n = self.dim()?;
        let ic = &self.initial_conditions;
        let mut rng = StdRng::seed_from_u64(seed.unwrap_or(ic.seed));
        let mut out = ic.points.clone();
        for _ in 0..ic.random {
            let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let len = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let r = ic.radius * rng.gen::<f64>().powf(1.0 / n as f64);
            out.push(dir.iter().map(|v| v * r / len).collect());
        }
        Ok(out)
    }

    /// Limits used by verification: `[verification] limits`, else `bounds`.
    pub fn limits(&self) -> Vec<f64> {
        self.verification.limits.clone().unwrap_or_else(|| self.bounds.clone())
    }

    /// The published triple-integrator example.
    pub fn triple_integrator() -> Self {
        ToolkitConfig {
            kind: ProblemKind::IntegratorChain,
            p: 2,
            bounds: vec![2.0, 20.0, 18.0],
            chain: Some(ChainConfig {
                n: 3,
                saturation: Some(SaturationChoice::Preset { name: "paper-example".into() }),
                saturations: None,
                mu_max: Some(vec![1.0 / 12.0, 0.4]),
                lambda: Some(6.5),
            }),
            skew: None,
            simulation: SimulationConfig::default(),
            initial_conditions: InitialConditions {
                points: vec![vec![446.7937, -69.875, 11.05]],
                ..InitialConditions::default()
            },
            verification: VerificationConfig { limits: Some(vec![2.0, 0.9, 18.0]) },
        }
    }

    /// The published harmonic-oscillator example.
    pub fn harmonic_oscillator() -> Self {
        ToolkitConfig {
            kind: ProblemKind::Skew,
            p: 1,
            bounds: vec![2.0, 2.0],
            chain: None,
            skew: Some(SkewConfig {
                a: vec![vec![0.0, 5.0], vec![-5.0, 0.0]],
                b: vec![0.0, 1.0],
                alpha: 0.5,
                beta: Some((41f64.sqrt() - 5.0) / 4.0),
            }),
            simulation: SimulationConfig::default(),
            initial_conditions: InitialConditions { points: vec![vec![2.0, -2.0]], ..InitialConditions::default() },
            verification: VerificationConfig::default(),
        }
    }
}
