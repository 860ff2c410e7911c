//! Dirichlet problems on a whole network by a branch-wise contraction
//! iteration, and the star-junction Kirchhoff pipeline built on it: the
//! residual map `F(θ)`, its bracket, the root search and the ε/η
//! continuation with a Lipschitz monitor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edge_solver::{solve_censored, EdgeOptions, EdgeProblem};
use crate::grid_core::{vertex_slope, Discretization, GridFunction};
use crate::net_graph::NetPoint;
use crate::problem::{Problem, SolverConfig};
use crate::KhjError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `‖u^{k+1} − u^k‖∞` over coupled edges, one entry per sweep.
    pub increments: Vec<f64>,
    /// `max λ_i/(λ + λ_i)` over coupled edges and interior nodes, from the
    /// discrete tail masses.
    pub lambda_star: f64,
    /// Increment ratios checked against `1.05 λ*` (sweeps 3 onwards).
    pub ratios: Vec<f64>,
    pub measured_factor: f64,
    pub coupled_edges: usize,
    pub censored_edges: usize,
    pub edge_newton_steps: usize,
    pub edge_jacobi_sweeps: usize,
}

/// Options shared by every Dirichlet network solve.
#[derive(Debug, Clone, Copy)]
pub struct DirichletOptions {
    pub edge: EdgeOptions,
    pub tol_fp: f64,
    pub max_sweeps: usize,
    pub check_contraction: bool,
}

impl DirichletOptions {
    pub fn from_config(cfg: &SolverConfig) -> Self {
        Self {
            edge: EdgeOptions {
                tol: (0.01 * cfg.tol_fp).min(1e-11),
                max_newton: cfg.max_iter,
                max_jacobi: cfg.max_jacobi,
                damping_floor: cfg.damping_floor,
            },
            tol_fp: cfg.tol_fp,
            max_sweeps: cfg.max_sweeps,
            check_contraction: true,
        }
    }
}

/// Vertex values: `theta` at interior vertices (canonical order), Dirichlet
/// data at boundary vertices.
pub fn vertex_values(disc: &Discretization, theta: &[f64]) -> Result<Vec<f64>, KhjError> {
    let interior = disc.net.interior_vertices();
    if theta.len() != interior.len() {
        return Err(KhjError::Precondition(format!("expected {} vertex values, got {}", interior.len(), theta.len())));
    }
    let mut v = disc.boundary_values();
    for (k, &i) in interior.iter().enumerate() {
        v[i] = theta[k];
    }
    Ok(v)
}

/// Contraction factor `λ*` of the coupled iteration.
pub fn lambda_star(disc: &Discretization) -> f64 {
    let mut s = 0.0f64;
    for e in 0..disc.n_edges() {
        if !disc.op.is_coupled(e) {
            continue;
        }
        let m = disc.op.exterior_mass(e);
        for &li in &m[1..m.len() - 1] {
            s = s.max(li / (disc.lambda + li));
        }
    }
    s
}

fn solve_edge(
    disc: &Discretization,
    e: usize,
    u: &GridFunction,
    lambda_add: &[f64],
    coupled: bool,
    opts: &EdgeOptions,
) -> Result<(Vec<f64>, usize, usize), KhjError> {
    let g = &disc.grid.edges[e];
    let mut src = disc.f[e].clone();
    if coupled {
        for f in (0..disc.n_edges()).filter(|&f| f != e) {
            if let Some(s) = disc.op.exterior_source(e, f, &u.edge_values(f)) {
                for (a, b) in src.iter_mut().zip(s) {
                    *a += b;
                }
            }
        }
    }
    let mu = disc.mu_vec(e);
    let coef: Vec<f64> = (0..=g.n_cells).map(|m| disc.flux_coef(e, m)).collect();
    let init = u.edge_values(e);
    let p = EdgeProblem {
        lambda: disc.lambda,
        h: g.h,
        x: &disc.x[e],
        mu: &mu,
        weights: disc.op.block(e, e),
        lambda_add: if coupled { lambda_add } else { &[] },
        source: &src,
        ham: &disc.hams[e],
        flux_coef: &coef,
        tail: init[0],
        head: init[g.n_cells],
    };
    let s = solve_censored(&p, Some(&init), opts).map_err(|err| match err {
        KhjError::Budget { what, iterations, last, history } => {
            KhjError::Budget { what: format!("{what} on edge '{}'", disc.net.edges()[e].id), iterations, last, history }
        }
        other => other,
    })?;
    Ok((s.values, s.newton_steps, s.jacobi_sweeps))
}

/// Solves the Dirichlet problem with the given values at every vertex.
/// Censored edges are solved once; coupled edges are swept Jacobi-style
/// with frozen exterior sources until the increment drops below `tol_fp`.
pub fn solve_dirichlet(
    disc: &Discretization,
    vertex: &[f64],
    init: Option<&GridFunction>,
    opts: &DirichletOptions,
) -> Result<(GridFunction, ContractionReport), KhjError> {
    let ne = disc.n_edges();
    let mut u = match init {
        Some(u0) => u0.clone(),
        None => {
            let ends = disc.grid.ends.clone();
            GridFunction::from_fn(&disc.grid, |e, x| {
                let (t, h) = ends[e];
                let a = disc.grid.edges[e].length;
                vertex[t] + (vertex[h] - vertex[t]) * x / a
            })
        }
    };
    u.vertex.copy_from_slice(vertex);
    let coupled: Vec<usize> = (0..ne).filter(|&e| disc.op.is_coupled(e)).collect();
    let censored: Vec<usize> = (0..ne).filter(|&e| !disc.op.is_coupled(e)).collect();
    let masses: Vec<Vec<f64>> = (0..ne).map(|e| disc.op.exterior_mass(e)).collect();
    let mut report = ContractionReport {
        lambda_star: lambda_star(disc),
        coupled_edges: coupled.len(),
        censored_edges: censored.len(),
        ..Default::default()
    };

    let solved: Vec<_> = censored
        .par_iter()
        .map(|&e| solve_edge(disc, e, &u, &masses[e], false, &opts.edge))
        .collect::<Result<Vec<_>, _>>()?;
    for (&e, (vals, ns, js)) in censored.iter().zip(solved) {
        u.interior[e].copy_from_slice(&vals[1..vals.len() - 1]);
        report.edge_newton_steps += ns;
        report.edge_jacobi_sweeps += js;
    }
    if coupled.is_empty() {
        return Ok((u, report));
    }
    let floor = 1e3 * opts.edge.tol / disc.lambda;
    for sweep in 1..=opts.max_sweeps {
        let next: Vec<_> = coupled
            .par_iter()
            .map(|&e| solve_edge(disc, e, &u, &masses[e], true, &opts.edge))
            .collect::<Result<Vec<_>, _>>()?;
        let mut inc = 0.0f64;
        for (&e, (vals, ns, js)) in coupled.iter().zip(next) {
            for (a, b) in u.interior[e].iter_mut().zip(&vals[1..vals.len() - 1]) {
                inc = inc.max((*a - b).abs());
                *a = *b;
            }
            report.edge_newton_steps += ns;
            report.edge_jacobi_sweeps += js;
        }
        report.increments.push(inc);
        if sweep >= 3 {
            let prev = report.increments[sweep - 2];
            if prev > floor {
                let ratio = inc / prev;
                report.ratios.push(ratio);
                report.measured_factor = report.measured_factor.max(ratio);
                if opts.check_contraction && ratio > 1.05 * report.lambda_star {
                    return Err(KhjError::ContractionViolation { sweep, ratio, bound: report.lambda_star });
                }
            }
        }
        if inc <= opts.tol_fp {
            return Ok((u, report));
        }
    }
    let last = report.increments.last().copied().unwrap_or(f64::NAN);
    Err(KhjError::Budget {
        what: "coupled contraction iteration".into(),
        iterations: opts.max_sweeps,
        last,
        history: report.increments,
    })
}

/// Index of the single interior vertex of a star network.
pub fn star_center(disc: &Discretization) -> Result<usize, KhjError> {
    let interior = disc.net.interior_vertices();
    if interior.len() != 1 {
        return Err(KhjError::Precondition(format!("a junction has exactly one interior vertex, found {}", interior.len())));
    }
    let o = interior[0];
    if disc.net.incidence(o).len() != disc.n_edges() {
        return Err(KhjError::Precondition("every edge of a junction must be incident to the interior vertex".into()));
    }
    Ok(o)
}

/// `Σ −∂_E u(v) − B_v` over edges incident to the interior vertex `v`.
pub fn kirchhoff_residual_at(u: &GridFunction, disc: &Discretization, v: usize) -> Result<f64, KhjError> {
    let b = disc.net.vertices()[v]
        .kirchhoff_flux
        .ok_or_else(|| KhjError::Precondition(format!("vertex {v} has no Kirchhoff flux")))?;
    let mut s = -b;
    for &(e, _) in disc.net.incidence(v) {
        s -= vertex_slope(u, &disc.grid, e, v)?;
    }
    Ok(s)
}

pub fn kirchhoff_residual(u: &GridFunction, disc: &Discretization) -> Result<f64, KhjError> {
    kirchhoff_residual_at(u, disc, star_center(disc)?)
}

pub fn solve_dirichlet_star(
    disc: &Discretization,
    theta: f64,
    init: Option<&GridFunction>,
    opts: &DirichletOptions,
) -> Result<(GridFunction, ContractionReport), KhjError> {
    star_center(disc)?;
    solve_dirichlet(disc, &vertex_values(disc, &[theta])?, init, opts)
}

/// Data bound entering the bracket for the vertex values.
#[derive(Debug, Clone, Copy)]
pub struct BracketData {
    pub a_bar: f64,
    pub p: f64,
    pub n: usize,
    pub c_h: f64,
    pub f_max: f64,
    pub h_max: f64,
}

impl BracketData {
    pub fn from_disc(disc: &Discretization, flux: f64, degree: usize) -> Self {
        let net = &disc.net;
        Self {
            a_bar: net.max_length(),
            p: flux.abs() / degree as f64,
            n: degree,
            c_h: disc.hams.iter().map(|h| h.c_h).fold(1.0, f64::max),
            f_max: disc.f.iter().flatten().fold(0.0, |a, b| a.max(b.abs())),
            h_max: net.vertices().iter().filter_map(|v| v.dirichlet_value).fold(0.0, |a, b| a.max(b.abs())),
        }
    }

    /// `θ⁺` from the supersolution `θ + p x` argument.
    pub fn theta_plus(&self, lambda: f64, sigma: f64, bound: f64) -> f64 {
        let p = self.p;
        let a = self.a_bar;
        let nonlocal = (2.0 * a).powf(1.0 - sigma) / (1.0 - sigma) * bound * self.n as f64 * p;
        let t1 = a * p + (nonlocal + self.c_h * (1.0 + p) + self.f_max) / lambda;
        let t2 = a * p + self.h_max;
        t1.max(t2)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KirchhoffState {
    pub bracket: (f64, f64),
    /// `(θ, F(θ))` in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
    pub theta: f64,
    pub residual: f64,
    pub converged: bool,
    pub widenings: usize,
    /// More than one sign change seen among evaluations.
    pub multiple_roots: bool,
}

#[derive(Debug, Clone)]
pub struct KirchhoffSolution {
    pub theta: f64,
    pub u: GridFunction,
    pub state: KirchhoffState,
    pub contraction: ContractionReport,
}

/// Evaluates `F(θ)` with a warm start, returning the Dirichlet solution too.
pub fn kirchhoff_map(
    disc: &Discretization,
    theta: f64,
    init: Option<&GridFunction>,
    opts: &DirichletOptions,
) -> Result<(f64, GridFunction, ContractionReport), KhjError> {
    let (u, rep) = solve_dirichlet_star(disc, theta, init, opts)?;
    let f = kirchhoff_residual(&u, disc)?;
    Ok((f, u, rep))
}

/// `(θ⁻, θ⁺)` with `F(θ⁻) ≤ 0 ≤ F(θ⁺)`, widened by 2 up to six times.
pub fn bracket_theta(disc: &Discretization, opts: &DirichletOptions) -> Result<((f64, f64), KirchhoffState), KhjError> {
    let o = star_center(disc)?;
    let b = disc.net.vertices()[o].kirchhoff_flux.unwrap_or(0.0);
    let data = BracketData::from_disc(disc, b, disc.net.incidence(o).len());
    let mut tp = data.theta_plus(disc.lambda, disc.kernels.sigma, disc.kernels.bound).max(1e-3);
    let mut state = KirchhoffState::default();
    let mut warm: Option<GridFunction> = None;
    for widen in 0..=6 {
        let (fm, um, _) = kirchhoff_map(disc, -tp, warm.as_ref(), opts)?;
        let (fp, up, _) = kirchhoff_map(disc, tp, Some(&um), opts)?;
        state.evaluations.push((-tp, fm));
        state.evaluations.push((tp, fp));
        warm = Some(up);
        if fm <= 0.0 && fp >= 0.0 {
            state.bracket = (-tp, tp);
            state.widenings = widen;
            return Ok(((-tp, tp), state));
        }
        tp *= 2.0;
    }
    Err(KhjError::Bracketing(format!("no sign change of F on [-{tp}, {tp}] after 6 widenings")))
}

fn count_sign_changes(evals: &[(f64, f64)]) -> usize {
    let mut v: Vec<(f64, f64)> = evals.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v.dedup_by(|a, b| a.0 == b.0);
    let signs: Vec<f64> = v.iter().map(|p| p.1).filter(|f| *f != 0.0).map(f64::signum).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Bracketed secant (Illinois) search for `F(θ) = 0` on a junction,
/// falling back to bisection whenever the secant point leaves the bracket.
pub fn solve_kirchhoff(
    disc: &Discretization,
    tol_k: f64,
    init: Option<&GridFunction>,
    opts: &DirichletOptions,
) -> Result<KirchhoffSolution, KhjError> {
    let ((mut a, mut b), mut state) = bracket_theta(disc, opts)?;
    let find = |t: f64| state.evaluations.iter().rev().find(|p| p.0 == t).map(|p| p.1).unwrap_or(f64::NAN);
    let (mut fa, mut fb) = (find(a), find(b));
    let mut warm = init.cloned();
    let mut best: Option<(f64, f64, GridFunction, ContractionReport)> = None;
    let mut side = 0i8;
    for _ in 0..200 {
        let mut t = if fb != fa { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
        if !(t > a && t < b) {
            t = 0.5 * (a + b);
        }
        let (ft, u, rep) = kirchhoff_map(disc, t, warm.as_ref(), opts)?;
        state.evaluations.push((t, ft));
        warm = Some(u.clone());
        if best.as_ref().is_none_or(|bst| ft.abs() < bst.1.abs()) {
            best = Some((t, ft, u, rep));
        }
        if ft.abs() <= tol_k {
            break;
        }
        if ft < 0.0 {
            a = t;
            fa = ft;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = t;
            fb = ft;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if b - a <= 4.0 * f64::EPSILON * state.bracket.1.abs().max(1.0) {
            break;
        }
    }
    let (theta, res, u, rep) = best.expect("at least one evaluation");
    state.theta = theta;
    state.residual = res.abs();
    state.converged = res.abs() <= tol_k;
    state.multiple_roots = count_sign_changes(&state.evaluations) > 1;
    Ok(KirchhoffSolution { theta, u, state, contraction: rep })
}

/// Nodes at distance more than `delta` from every boundary vertex, as
/// `(edge, node)` pairs.
pub fn gamma_delta_nodes(disc: &Discretization, delta: f64) -> Vec<Vec<bool>> {
    (0..disc.n_edges())
        .map(|e| {
            disc.x[e].iter().map(|&x| disc.net.distance_to_boundary(NetPoint { edge: e, arc: x }) > delta).collect()
        })
        .collect()
}

/// Largest adjacent-node slope with both nodes in the mask.
pub fn lipschitz_monitor(u: &GridFunction, disc: &Discretization, mask: &[Vec<bool>]) -> f64 {
    let mut s = 0.0f64;
    for e in 0..disc.n_edges() {
        let v = u.edge_values(e);
        let h = disc.grid.edges[e].h;
        for m in 0..v.len() - 1 {
            if mask[e][m] && mask[e][m + 1] {
                s = s.max((v[m + 1] - v[m]).abs() / h);
            }
        }
    }
    s
}

pub fn masked_diff(u: &GridFunction, v: &GridFunction, mask: &[Vec<bool>]) -> f64 {
    let mut s = 0.0f64;
    for (e, row) in mask.iter().enumerate() {
        let (a, b) = (u.edge_values(e), v.edge_values(e));
        for m in 0..row.len() {
            if row[m] {
                s = s.max((a[m] - b[m]).abs());
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub epsilon: f64,
    pub eta: f64,
    pub theta: f64,
    pub kirchhoff_residual: f64,
    pub lipschitz: f64,
    /// Sup-difference on Γ^δ to the previous step.
    pub diff_prev: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub steps: Vec<ContinuationStep>,
    pub solutions: Vec<GridFunction>,
    pub delta: f64,
    /// Monitor exceeded ten times its first value at some step.
    pub alarm: bool,
    pub disc: Discretization,
}

/// Warm-started Kirchhoff solves along decreasing ε and η schedules.
pub fn continuation(problem: &Problem, eps: &[f64], etas: &[f64]) -> Result<ContinuationResult, KhjError> {
    let steps = eps.len().max(etas.len());
    if steps == 0 {
        return Err(KhjError::Precondition("continuation needs a nonempty schedule".into()));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) || etas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(KhjError::Precondition("schedules must be strictly decreasing".into()));
    }
    let h = problem.max_h();
    if eps.iter().any(|&e| e < h * h) {
        return Err(KhjError::Precondition(format!("epsilon below the grid floor h^2 = {}", h * h)));
    }
    if etas.iter().any(|&e| e < h * (1.0 - 1e-12)) {
        return Err(KhjError::Precondition(format!("eta below the grid floor h = {h}")));
    }
    let opts = DirichletOptions::from_config(&problem.config);
    let pick = |s: &[f64], i: usize| s.get(i.min(s.len().saturating_sub(1))).copied();
    let mut p = problem.clone();
    let mut disc: Option<Discretization> = None;
    let mut out = Vec::new();
    let mut sols: Vec<GridFunction> = Vec::new();
    let delta = problem.network.min_length() / 4.0;
    let mut mask = Vec::new();
    let mut first_lip = None;
    let mut alarm = false;
    for i in 0..steps {
        let e = pick(eps, i).unwrap_or(problem.config.epsilon);
        let eta = pick(etas, i).or(problem.config.eta);
        let rebuild = disc.is_none() || eta.is_some_and(|v| disc.as_ref().is_some_and(|d| d.eta != v));
        p.config.epsilon = e;
        p.config.eta = eta;
        if rebuild {
            disc = Some(Discretization::new(&p)?);
            mask = gamma_delta_nodes(disc.as_ref().unwrap(), delta);
        }
        let d = disc.as_mut().unwrap();
        d.epsilon = e;
        let sol = solve_kirchhoff(d, problem.config.tol_k, sols.last(), &opts)?;
        let lip = lipschitz_monitor(&sol.u, d, &mask);
        let first = *first_lip.get_or_insert(lip);
        if lip > 10.0 * first.max(f64::MIN_POSITIVE) {
            alarm = true;
        }
        out.push(ContinuationStep {
            epsilon: e,
            eta: d.eta,
            theta: sol.theta,
            kirchhoff_residual: sol.state.residual,
            lipschitz: lip,
            diff_prev: sols.last().map(|prev| masked_diff(prev, &sol.u, &mask)),
        });
        sols.push(sol.u);
    }
    Ok(ContinuationResult { steps: out, solutions: sols, delta, alarm, disc: disc.unwrap() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::HamiltonianSpec;
    use crate::levy_kernels::{KernelForm, KernelSpec};
    use crate::net_graph::Network;
    use crate::problem::Coef;

    fn star_problem(c: f64, exterior: bool) -> Problem {
        let net = Network::star(&[1.0, 1.0], 0.0, &[c, c]).unwrap();
        let k = if exterior {
            KernelSpec::uniform(2, 0.5, 1.0, KernelForm::model(1.0))
        } else {
            KernelSpec::censored(2, 0.5, 1.0, KernelForm::model(1.0))
        };
        let mut p = Problem::new(net, k, vec![HamiltonianSpec::abs(1.0); 2]);
        p.sources = vec![Coef::constant(c); 2];
        p.set_h(0.05);
        p
    }

    #[test]
    fn constant_compatible_data() {
        let p = star_problem(0.7, true);
        let d = Discretization::new(&p).unwrap();
        let opts = DirichletOptions::from_config(&p.config);
        let (u, rep) = solve_dirichlet_star(&d, 0.7, None, &opts).unwrap();
        assert!(u.max_abs_diff(&GridFunction::constant(&d.grid, 0.7)) < 1e-12);
        assert!(rep.increments.len() <= 2);
        assert!(kirchhoff_residual(&u, &d).unwrap().abs() < 1e-10);
        let sol = solve_kirchhoff(&d, 1e-10, None, &opts).unwrap();
        assert!((sol.theta - 0.7).abs() < 1e-8);
    }

    #[test]
    fn censored_edges_need_no_sweeps() {
        let p = star_problem(0.0, false);
        let d = Discretization::new(&p).unwrap();
        let opts = DirichletOptions::from_config(&p.config);
        let (_, rep) = solve_dirichlet_star(&d, 0.3, None, &opts).unwrap();
        assert_eq!(rep.coupled_edges, 0);
        assert!(rep.increments.is_empty());
    }

    #[test]
    fn bracket_formula_example() {
        let data = BracketData { a_bar: 1.0, p: 0.0, n: 3, c_h: 1.0, f_max: 0.0, h_max: 0.0 };
        assert_eq!(data.theta_plus(1.0, 0.5, 1.0), 1.0);
        let big = BracketData { p: 10.0, ..data };
        let bigger = BracketData { p: 20.0, ..data };
        let (t1, t2) = (big.theta_plus(1.0, 0.5, 1.0), bigger.theta_plus(1.0, 0.5, 1.0));
        let t0 = data.theta_plus(1.0, 0.5, 1.0);
        assert!(((t2 - t1) - (t1 - t0)).abs() < 1e-9 * t2);
    }

    #[test]
    fn residual_of_linear_data() {
        let net = Network::star(&[1.0, 1.0, 1.0], 1.0, &[0.0; 3]).unwrap();
        let mut p = Problem::new(net, KernelSpec::uniform(3, 0.5, 1.0, KernelForm::Zero), vec![HamiltonianSpec::abs(1.0); 3]);
        p.set_h(0.1);
        let d = Discretization::new(&p).unwrap();
        let c = GridFunction::constant(&d.grid, 2.0);
        assert!((kirchhoff_residual(&c, &d).unwrap() + 1.0).abs() < 1e-14);
        let slopes = [-0.5, -0.25, -0.25];
        let u = GridFunction::from_fn(&d.grid, |e, x| slopes[e] * x);
        assert!(kirchhoff_residual(&u, &d).unwrap().abs() < 1e-13);
    }
}
