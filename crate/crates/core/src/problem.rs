//! In-memory problem description shared by all solvers.

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::hamiltonians::HamiltonianSpec;
use crate::levy_kernels::KernelSpec;
use crate::net_graph::Network;
use crate::KhjError;

/// A coefficient function of the arc coordinate: an expression or samples
/// interpolated linearly (constant beyond the ends).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Expr(Expr),
    Samples { arc: Vec<f64>, values: Vec<f64> },
}

impl Coef {
    pub fn constant(v: f64) -> Self {
        Coef::Expr(Expr::constant(v))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coef::Expr(e) => e.eval(x),
            Coef::Samples { arc, values } => {
                let n = arc.len();
                if x <= arc[0] {
                    return values[0];
                }
                if x >= arc[n - 1] {
                    return values[n - 1];
                }
                let k = arc.partition_point(|&a| a <= x) - 1;
                let t = (x - arc[k]) / (arc[k + 1] - arc[k]);
                values[k] + t * (values[k + 1] - values[k])
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Coef::Expr(_) => Ok(()),
            Coef::Samples { arc, values } => {
                if arc.is_empty() || arc.len() != values.len() || arc.windows(2).any(|w| !(w[1] > w[0])) {
                    Err("samples need increasing arcs matching values".into())
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Viscosity coefficient used in the Lax–Friedrichs flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FluxCoef {
    /// Always `C_H`.
    Global,
    /// `max(0, C_H - 2 mu / h)`: still monotone, and central where diffusion
    /// dominates.
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub epsilon: f64,
    /// Kernel truncation; `None` means the largest grid spacing.
    pub eta: Option<f64>,
    pub tol_fp: f64,
    pub tol_k: f64,
    /// Newton iterations per edge solve.
    pub max_iter: usize,
    /// Damped-Jacobi fallback budget per edge solve.
    pub max_jacobi: usize,
    /// Coupled sweeps per Dirichlet network solve.
    pub max_sweeps: usize,
    /// Smallest line-search step before Newton gives up.
    pub damping_floor: f64,
    pub flux: FluxCoef,
    pub eps_schedule: Vec<f64>,
    pub eta_schedule: Vec<f64>,
    /// Uniform target spacing; edges get `ceil(length / h)` cells.
    pub h: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 0.0,
            eta: None,
            tol_fp: 1e-10,
            tol_k: 1e-9,
            max_iter: 100,
            max_jacobi: 200_000,
            max_sweeps: 5000,
            damping_floor: 1e-12,
            flux: FluxCoef::Adaptive,
            eps_schedule: Vec::new(),
            eta_schedule: Vec::new(),
            h: 0.01,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.lambda > 0.0) {
            v.push(format!("lambda = {} must be positive", self.lambda));
        }
        if !(self.epsilon >= 0.0) {
            v.push(format!("epsilon = {} must be nonnegative", self.epsilon));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                v.push(format!("eta = {eta} must lie in (0, 1]"));
            }
        }
        if !(self.tol_fp > 0.0 && self.tol_k > 0.0) {
            v.push("tolerances must be positive".into());
        }
        if !(self.h > 0.0) {
            v.push(format!("grid spacing h = {} must be positive", self.h));
        }
        if self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) || self.eta_schedule.windows(2).any(|w| w[1] >= w[0]) {
            v.push("continuation schedules must be strictly decreasing".into());
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub network: Network,
    pub kernels: KernelSpec,
    /// Indexed by canonical edge index.
    pub hamiltonians: Vec<HamiltonianSpec>,
    pub sources: Vec<Coef>,
    /// Edge diffusion `mu_E(x)`, added to `epsilon`.
    pub diffusion: Vec<Coef>,
    pub config: SolverConfig,
    /// Cells per edge; defaults from `config.h`.
    pub n_cells: Vec<usize>,
}

impl Problem {
    /// Zero sources, zero diffusion, default configuration.
    pub fn new(network: Network, kernels: KernelSpec, hamiltonians: Vec<HamiltonianSpec>) -> Self {
        let ne = network.n_edges();
        let config = SolverConfig::default();
        let mut p = Self {
            network,
            kernels,
            hamiltonians,
            sources: vec![Coef::constant(0.0); ne],
            diffusion: vec![Coef::constant(0.0); ne],
            config,
            n_cells: Vec::new(),
        };
        p.set_h(p.config.h);
        p
    }

    pub fn set_h(&mut self, h: f64) {
        self.config.h = h;
        self.n_cells = self.network.edges().iter().map(|e| ((e.length / h - 1e-9).ceil() as usize).max(4)).collect();
    }

    pub fn with_config(mut self, cfg: SolverConfig) -> Self {
        let h = cfg.h;
        self.config = cfg;
        self.set_h(h);
        self
    }

    pub fn max_h(&self) -> f64 {
        self.network.edges().iter().zip(&self.n_cells).map(|(e, &n)| e.length / n as f64).fold(0.0, f64::max)
    }

    pub fn min_h(&self) -> f64 {
        self.network.edges().iter().zip(&self.n_cells).map(|(e, &n)| e.length / n as f64).fold(f64::INFINITY, f64::min)
    }

    /// Truncation level in effect.
    pub fn eta(&self) -> f64 {
        self.config.eta.unwrap_or_else(|| self.max_h())
    }

    pub fn c_h(&self) -> f64 {
        self.hamiltonians.iter().map(|h| h.c_h).fold(1.0, f64::max)
    }

    /// Every assumption that can be checked by sampling.
    pub fn check(&self) -> Vec<String> {
        let net = &self.network;
        let ne = net.n_edges();
        let mut v = self.config.validate();
        if self.hamiltonians.len() != ne || self.sources.len() != ne || self.diffusion.len() != ne || self.n_cells.len() != ne {
            v.push("per-edge data does not match the number of edges".into());
            return v;
        }
        if self.kernels.n_edges() != ne {
            v.push("kernel table does not match the number of edges".into());
        }
        let lengths: Vec<f64> = net.edges().iter().map(|e| e.length).collect();
        v.extend(self.kernels.check_assumptions(&lengths, 16));
        for (k, e) in net.edges().iter().enumerate() {
            for msg in self.hamiltonians[k].check_assumptions(e.length, 2000, 17 + k as u64) {
                v.push(format!("hamiltonian on edge '{}': {msg}", e.id));
            }
            for (name, c) in [("source", &self.sources[k]), ("diffusion", &self.diffusion[k])] {
                if let Err(m) = c.validate() {
                    v.push(format!("{name} on edge '{}': {m}", e.id));
                }
            }
            for j in 0..=16 {
                let x = e.length * j as f64 / 16.0;
                if !self.sources[k].eval(x).is_finite() {
                    v.push(format!("source on edge '{}' is not finite at x = {x}", e.id));
                    break;
                }
                let mu = self.diffusion[k].eval(x);
                if !(mu >= 0.0 && mu.is_finite()) {
                    v.push(format!("diffusion on edge '{}' is negative or not finite at x = {x}", e.id));
                    break;
                }
            }
            if self.n_cells[k] < 4 {
                v.push(format!("edge '{}' needs at least 4 cells", e.id));
            }
        }
        v
    }

    pub fn ensure_valid(&self) -> Result<(), KhjError> {
        let v = self.check();
        if v.is_empty() {
            Ok(())
        } else {
            Err(KhjError::Validation(v))
        }
    }
}
