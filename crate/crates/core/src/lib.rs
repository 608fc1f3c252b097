//! Feedback laws whose amplitude and first `p` time derivatives stay within
//! prescribed bounds: nested saturations for integrator chains and
//! gain-scheduled damping for skew-symmetric systems, together with closed-loop
//! simulation and trajectory verification.

pub mod combinatorics;
pub mod config;
pub mod controller;
pub mod error;
pub mod integrator;
mod poly;
pub mod saturation;
pub mod simulation;
pub mod skew;
pub mod verification;

pub use config::{ProblemKind, SaturationChoice, ToolkitConfig};
pub use controller::Controller;
pub use error::{Error, Result};
pub use integrator::{synthesize, ChainSpec, NestedSatController, SynthesisOverrides};
pub use saturation::{make_hermite_saturation, make_paper_example_saturation, SaturationSpec};
pub use simulation::{simulate, SimOptions, Trajectory};
pub use skew::{certify_beta, SkewController, SkewSystem};
pub use verification::{verify_bounds, verify_convergence, BoundReport, ConvergenceReport, DerivativeEvaluator};
