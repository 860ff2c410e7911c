//! Stationary nonlocal Hamilton–Jacobi equations on metric networks.
//!
//! Each edge `E` carries
//! `λu − μ_E u'' − I_E u + H_E(x, u') = f_E`, where `I_E` is a nonlocal
//! operator of order `σ < 1` coupling all edges through the geodesic
//! distance. Interior vertices impose a Kirchhoff condition
//! `Σ −∂_E u(v) = B_v` on inward derivatives, boundary vertices a Dirichlet
//! value.
//!
//! The solver pipeline: truncate the kernel, solve Dirichlet problems by a
//! branch-wise contraction iteration, then find the vertex values that
//! satisfy the Kirchhoff conditions. A flux-limiter layer and a property
//! harness verify the results.

pub mod cli_io;
pub mod edge_solver;
pub mod expr;
pub mod flux_limiter;
pub mod grid_core;
pub mod hamiltonians;
pub mod junction_solver;
pub mod levy_kernels;
pub mod net_graph;
pub mod network_solver;
pub mod problem;
pub mod quadrature;
pub mod verify_harness;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KhjError {
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Expr(#[from] expr::ExprError),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{what}: iteration budget exhausted after {iterations} iterations (last residual {last:.3e})")]
    Budget { what: String, iterations: usize, last: f64, history: Vec<f64> },
    #[error("contraction violated at sweep {sweep}: ratio {ratio:.6} exceeds 1.05 * {bound:.6}")]
    ContractionViolation { sweep: usize, ratio: f64, bound: f64 },
    #[error("bracketing failed: {0}")]
    Bracketing(String),
    #[error("consistency check failed: {0}")]
    Consistency(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub use grid_core::{Discretization, Grid, GridFunction};
pub use hamiltonians::{HamFamily, HamiltonianSpec};
pub use levy_kernels::{KernelForm, KernelSpec, LevyIntegral};
pub use net_graph::{Edge, NetPoint, Network, Vertex, VertexKind};
pub use problem::{Coef, FluxCoef, Problem, SolverConfig};
