//! Passivity-based distributed convex optimization over networks with
//! heterogeneous constant communication delays.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: communication graphs carrying the two edge-weight families
//!   (`a` for the proportional coupling, `b` for the integral coupling) and
//!   their Laplacians.
//! - [`problem`]: per-agent costs, gradients and inequality constraints, plus
//!   the built-in families (quadratic, partially strict quadratic,
//!   linearly constrained quadratic, 2-D ellipse localization).
//! - [`dynamics`]: right-hand sides of the gradient-consensus, PI-consensus and
//!   constrained primal-dual flows, and their per-agent delayed forms.
//! - [`scattering`]: wave-variable encoding/decoding that makes a constant
//!   delay channel passive.
//! - [`simulator`]: fixed-step delay-differential engine with delay lines and
//!   telemetry.
//! - [`oracle`]: centralized ground truth `(z*, λ*, ξ*)`.
//! - [`monitors`]: storage functions, dissipation checks and convergence
//!   metrics evaluated along simulated runs.
//! - [`scenario`]: structured-text scenario files, bundled presets, runs and
//!   parameter sweeps used by the `passopt` binary.
//!
//! ```
//! use passopt::graph::NetworkGraph;
//! use passopt::problem::quadratic_problem;
//! use passopt::oracle;
//!
//! let g = NetworkGraph::ring(5, 1.0, 3.0).unwrap();
//! let targets: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
//! let p = quadratic_problem(1, targets, None).unwrap();
//! let sol = oracle::solve_unconstrained(&p, &g, 2.0).unwrap();
//! assert!((sol.z_star[0] - 2.0).abs() < 1e-12);
//! ```

pub mod dynamics;
pub mod graph;
pub mod linalg;
pub mod monitors;
pub mod oracle;
pub mod problem;
pub mod scattering;
pub mod scenario;
pub mod simulator;

pub use dynamics::{AgentState, SwarmState};
pub use graph::{LaplacianKind, NetworkGraph};
pub use oracle::OracleSolution;
pub use problem::ProblemInstance;
pub use simulator::{SimConfig, Telemetry};
