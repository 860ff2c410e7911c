//! General networks: the vertex-residual map `F(Θ)` over all interior
//! vertices, a Poincaré–Miranda sign certificate on a box `[−θ⁺, θ⁺]^n`,
//! and a quasi-Newton root search with coordinate-bisection fallback.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid_core::{vertex_slope, Discretization, GridFunction};
use crate::junction_solver::{kirchhoff_residual_at, solve_dirichlet, vertex_values, ContractionReport, DirichletOptions};
use crate::problem::SolverConfig;
use crate::KhjError;

#[derive(Debug, Clone, Copy)]
pub struct NetworkOptions {
    pub dirichlet: DirichletOptions,
    pub tol_k: f64,
    pub max_iter: usize,
    /// Consecutive non-decreasing Newton steps before switching to
    /// coordinate bisection.
    pub max_stalls: usize,
    pub seed: u64,
    /// Box radius; computed from the data when absent.
    pub theta_plus: Option<f64>,
}

impl NetworkOptions {
    pub fn from_config(cfg: &SolverConfig) -> Self {
        Self {
            dirichlet: DirichletOptions::from_config(cfg),
            tol_k: cfg.tol_k,
            max_iter: cfg.max_iter,
            max_stalls: 10,
            seed: cfg.seed,
            theta_plus: None,
        }
    }
}

/// `F_j(Θ)` at every interior vertex (canonical order), with the Dirichlet
/// solution it came from.
pub fn residual_map(
    disc: &Discretization,
    theta: &[f64],
    init: Option<&GridFunction>,
    opts: &DirichletOptions,
) -> Result<(Vec<f64>, GridFunction, ContractionReport), KhjError> {
    let vals = vertex_values(disc, theta)?;
    let (u, rep) = solve_dirichlet(disc, &vals, init, opts)?;
    let f = disc
        .net
        .interior_vertices()
        .into_iter()
        .map(|v| {
            kirchhoff_residual_at(&u, disc, v)
                .map_err(|e| KhjError::Consistency(format!("residual at vertex '{}': {e}", disc.net.vertices()[v].id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((f, u, rep))
}

/// Profile on `[0, 1]`: slope `−B̄` on `[0, 1/8]`, a smoothstep blend of
/// the slope to zero on `[1/8, 1/4]`, the plateau `−3B̄/16`, mirrored about
/// `1/2`. Returns value, first and second derivative.
pub fn psi0(b_bar: f64, x: f64) -> (f64, f64, f64) {
    let ell = 0.125;
    let half = |y: f64| -> (f64, f64, f64) {
        if y <= ell {
            (-b_bar * y, -b_bar, 0.0)
        } else if y <= 2.0 * ell {
            let s = (y - ell) / ell;
            let q = 1.0 - 3.0 * s * s + 2.0 * s * s * s;
            let dq = -6.0 * s + 6.0 * s * s;
            let v = -b_bar * ell - b_bar * ell * (s - s * s * s + 0.5 * s.powi(4));
            (v, -b_bar * q, -b_bar * dq / ell)
        } else {
            (-3.0 * b_bar / 16.0, 0.0, 0.0)
        }
    };
    if x <= 0.5 {
        half(x)
    } else {
        let (v, d1, d2) = half(1.0 - x);
        (v, -d1, d2)
    }
}

/// `Ψ(x) = a ψ₀(x/a)` on an edge of length `a`: inward slope `−B̄` at both
/// ends.
pub fn psi_edge(b_bar: f64, a: f64, x: f64) -> (f64, f64, f64) {
    let (v, d1, d2) = psi0(b_bar, x / a);
    (a * v, d1, d2 / a)
}

/// Box radius from a supersolution `θ⁺ + Ψ` argument, analogous to the
/// junction bracket.
pub fn theta_plus(disc: &Discretization) -> f64 {
    let net = &disc.net;
    let b_bar = net.vertices().iter().filter_map(|v| v.kirchhoff_flux).fold(0.0f64, |a, b| a.max(b.abs())) + 1.0;
    let a_bar = net.max_length();
    let a_min = net.min_length();
    let sigma = disc.kernels.sigma;
    let ch = disc.hams.iter().map(|h| h.c_h).fold(1.0, f64::max);
    let f_max = disc.f.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    let h_max = net.vertices().iter().filter_map(|v| v.dirichlet_value).fold(0.0f64, |a, b| a.max(b.abs()));
    let mu_max = disc.mu_base.iter().flatten().fold(0.0f64, |a, &b| a.max(b)) + disc.epsilon;
    let n = net.n_edges() as f64;
    let sup = 3.0 * b_bar * a_bar / 16.0;
    let nonlocal = n * disc.kernels.bound * (2.0 * a_bar).powf(1.0 - sigma) / (1.0 - sigma) * b_bar;
    let second = mu_max * 12.0 * b_bar / a_min;
    let t1 = sup + (nonlocal + ch * (1.0 + b_bar) + second + f_max) / disc.lambda;
    t1.max(sup + h_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceSample {
    /// Interior vertex id.
    pub vertex: String,
    /// `+1` for the face `θ_j = θ⁺`, `−1` for `θ_j = −θ⁺`.
    pub side: i8,
    pub point: Vec<f64>,
    pub value: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirandaCertificate {
    pub theta_plus: f64,
    pub samples: Vec<FaceSample>,
    pub passed: bool,
}

impl MirandaCertificate {
    pub fn failures(&self) -> Vec<&FaceSample> {
        self.samples.iter().filter(|s| !s.ok).collect()
    }
}

/// Checks `F_j > 0` on the face `θ_j = θ⁺` and `F_j < 0` on `θ_j = −θ⁺`
/// at each face centre and two random face points.
pub fn certify_box(
    disc: &Discretization,
    theta_plus: f64,
    seed: u64,
    opts: &DirichletOptions,
) -> Result<MirandaCertificate, KhjError> {
    let interior = disc.net.interior_vertices();
    let n = interior.len();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for j in 0..n {
        for side in [1i8, -1] {
            let mut centre = vec![0.0; n];
            centre[j] = side as f64 * theta_plus;
            jobs.push((j, side, centre.clone()));
            if n > 1 {
                for _ in 0..2 {
                    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-theta_plus..=theta_plus)).collect();
                    p[j] = side as f64 * theta_plus;
                    jobs.push((j, side, p));
                }
            }
        }
    }
    let samples = jobs
        .into_par_iter()
        .map(|(j, side, point)| {
            let (f, _, _) = residual_map(disc, &point, None, opts)?;
            let value = f[j];
            let ok = if side > 0 { value > 0.0 } else { value < 0.0 };
            Ok(FaceSample { vertex: disc.net.vertices()[interior[j]].id.clone(), side, point, value, ok })
        })
        .collect::<Result<Vec<_>, KhjError>>()?;
    let passed = samples.iter().all(|s| s.ok);
    Ok(MirandaCertificate { theta_plus, samples, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub mode: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub theta: Vec<f64>,
    pub residuals: Vec<f64>,
    pub certificate: MirandaCertificate,
    pub trace: Vec<IterRecord>,
    pub converged: bool,
    pub widenings: usize,
    pub warnings: Vec<String>,
    pub contraction: ContractionReport,
}

#[derive(Debug, Clone)]
pub struct NetworkSolution {
    pub theta: Vec<f64>,
    pub u: GridFunction,
    pub report: NetworkReport,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

struct Best {
    theta: Vec<f64>,
    f: Vec<f64>,
    u: GridFunction,
    rep: ContractionReport,
}

impl Best {
    fn norm(&self) -> f64 {
        inf_norm(&self.f)
    }
}

/// Certifies a box (doubling `θ⁺` up to six times), then searches for the
/// root of `F` inside it.
pub fn solve_network(disc: &Discretization, opts: &NetworkOptions) -> Result<NetworkSolution, KhjError> {
    let n = disc.net.interior_vertices().len();
    if n == 0 {
        return Err(KhjError::Precondition("network has no interior vertex".into()));
    }
    let d = &opts.dirichlet;
    let mut tp = opts.theta_plus.unwrap_or_else(|| theta_plus(disc)).max(1e-3);
    let mut widenings = 0;
    let certificate = loop {
        let c = certify_box(disc, tp, opts.seed, d)?;
        if c.passed {
            break c;
        }
        if opts.theta_plus.is_some() || widenings == 6 {
            let bad: Vec<String> =
                c.failures().iter().map(|s| format!("vertex '{}' face {:+}: F = {:.3e}", s.vertex, s.side, s.value)).collect();
            return Err(KhjError::Bracketing(format!("Miranda certificate failed on [-{tp}, {tp}]: {}", bad.join("; "))));
        }
        tp *= 2.0;
        widenings += 1;
    };

    let project = |t: &mut [f64]| t.iter_mut().for_each(|v| *v = v.clamp(-tp, tp));
    let theta0 = vec![0.0; n];
    let (f0, u0, r0) = residual_map(disc, &theta0, None, d)?;
    let mut cur = Best { theta: theta0, f: f0, u: u0, rep: r0 };
    let mut trace = vec![IterRecord { iteration: 0, mode: "start".into(), residual: cur.norm() }];
    let mut warnings = Vec::new();
    let step = (1e-2 * opts.tol_k).max(1e-4);
    let mut stalls = 0;
    let mut iter = 0;

    while cur.norm() > opts.tol_k && iter < opts.max_iter && stalls < opts.max_stalls {
        iter += 1;
        let cols = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut t = cur.theta.clone();
                t[k] += step;
                residual_map(disc, &t, Some(&cur.u), d).map(|r| r.0)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let jac = DMatrix::from_fn(n, n, |i, k| (cols[k][i] - cur.f[i]) / step);
        let dir = jac.lu().solve(&(-DVector::from_column_slice(&cur.f)));
        let Some(dir) = dir.filter(|v| v.iter().all(|x| x.is_finite())) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut t: Vec<f64> = cur.theta.iter().zip(dir.iter()).map(|(a, b)| a + alpha * b).collect();
            project(&mut t);
            let (f, u, rep) = residual_map(disc, &t, Some(&cur.u), d)?;
            if inf_norm(&f) < cur.norm() {
                accepted = Some(Best { theta: t, f, u, rep });
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(next) => {
                stalls = if next.norm() > 0.9 * cur.norm() { stalls + 1 } else { 0 };
                cur = next;
            }
            None => stalls += 1,
        }
        trace.push(IterRecord { iteration: iter, mode: "newton".into(), residual: cur.norm() });
    }

    if cur.norm() > opts.tol_k {
        let mut sweeps = 0;
        while cur.norm() > opts.tol_k && sweeps < opts.max_iter {
            sweeps += 1;
            for j in 0..n {
                cur = coordinate_bisect(disc, cur, j, tp, opts, &mut warnings)?;
            }
            trace.push(IterRecord { iteration: iter + sweeps, mode: "bisection".into(), residual: cur.norm() });
        }
    }

    let converged = cur.norm() <= opts.tol_k;
    if !converged {
        return Err(KhjError::Budget {
            what: "network root search".into(),
            iterations: trace.len(),
            last: cur.norm(),
            history: trace.iter().map(|r| r.residual).collect(),
        });
    }
    if cur.theta.iter().any(|t| t.abs() >= tp) {
        warnings.push("root on the boundary of the certified box".into());
    }
    let report = NetworkReport {
        theta: cur.theta.clone(),
        residuals: cur.f.clone(),
        certificate,
        trace,
        converged,
        widenings,
        warnings,
        contraction: cur.rep,
    };
    Ok(NetworkSolution { theta: cur.theta, u: cur.u, report })
}

/// Solves `F_j = 0` in `θ_j` alone inside `[−θ⁺, θ⁺]` with the other
/// coordinates frozen (Illinois iteration).
fn coordinate_bisect(
    disc: &Discretization,
    cur: Best,
    j: usize,
    tp: f64,
    opts: &NetworkOptions,
    warnings: &mut Vec<String>,
) -> Result<Best, KhjError> {
    let d = &opts.dirichlet;
    let base = cur.theta.clone();
    let eval = |t: f64, init: &GridFunction| -> Result<Best, KhjError> {
        let mut th = base.clone();
        th[j] = t;
        let (f, u, rep) = residual_map(disc, &th, Some(init), d)?;
        Ok(Best { theta: th, f, u, rep })
    };
    let lo = eval(-tp, &cur.u)?;
    let hi = eval(tp, &cur.u)?;
    let (mut a, mut fa, mut b, mut fb) = (-tp, lo.f[j], tp, hi.f[j]);
    if fa > 0.0 || fb < 0.0 {
        return Err(KhjError::Bracketing(format!("coordinate {j} lost its sign change inside the certified box")));
    }
    let mut evals = vec![(a, fa), (cur.theta[j], cur.f[j]), (b, fb)];
    let mut best = cur;
    let mut side = 0i8;
    for _ in 0..200 {
        let mut t = (a * fb - b * fa) / (fb - fa);
        if !(t > a && t < b) {
            t = 0.5 * (a + b);
        }
        let s = eval(t, &best.u)?;
        let ft = s.f[j];
        evals.push((t, ft));
        let done = ft.abs() <= 0.1 * opts.tol_k || b - a <= 4.0 * f64::EPSILON * tp;
        if ft.abs() <= best.f[j].abs() || best.theta[j] == t {
            best = s;
        }
        if done {
            break;
        }
        if ft < 0.0 {
            (a, fa) = (t, ft);
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            (b, fb) = (t, ft);
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    evals.sort_by(|x, y| x.0.total_cmp(&y.0));
    let signs: Vec<f64> = evals.iter().map(|p| p.1).filter(|f| *f != 0.0).map(f64::signum).collect();
    if signs.windows(2).filter(|w| w[0] != w[1]).count() > 1 {
        warnings.push(format!("coordinate {j}: several sign changes, candidate roots may not be unique"));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexMatching {
    pub vertex: String,
    /// `(edge id, inward slope)` per incident edge.
    pub slopes: Vec<(String, f64)>,
    /// `Σ −slope − B`.
    pub kirchhoff_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViscousReport {
    pub network: NetworkReport,
    pub matching: Vec<VertexMatching>,
    /// `max |u_{m+1} − 2u_m + u_{m−1}| / h²` over all edges.
    pub max_second_difference: f64,
    pub min_diffusion: f64,
}

/// Strictly elliptic networks: the diffusion coefficient alone supplies
/// the ellipticity, so no ε-continuation is run.
pub fn solve_viscous_network(
    disc: &Discretization,
    opts: &NetworkOptions,
) -> Result<(NetworkSolution, ViscousReport), KhjError> {
    let min_mu = disc.mu_base.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(min_mu > 0.0) {
        return Err(KhjError::Precondition(format!("viscous mode needs diffusion bounded below by a positive constant, min is {min_mu}")));
    }
    let sol = solve_network(disc, opts)?;
    let net = &disc.net;
    let mut matching = Vec::new();
    for v in net.interior_vertices() {
        let mut slopes = Vec::new();
        let mut sum = -net.vertices()[v].kirchhoff_flux.unwrap_or(0.0);
        for &(e, _) in net.incidence(v) {
            let s = vertex_slope(&sol.u, &disc.grid, e, v)?;
            sum -= s;
            slopes.push((net.edges()[e].id.clone(), s));
        }
        matching.push(VertexMatching { vertex: net.vertices()[v].id.clone(), slopes, kirchhoff_sum: sum });
    }
    let mut d2 = 0.0f64;
    for e in 0..disc.n_edges() {
        let vals = sol.u.edge_values(e);
        let h = disc.grid.edges[e].h;
        for w in vals.windows(3) {
            d2 = d2.max((w[0] - 2.0 * w[1] + w[2]).abs() / (h * h));
        }
    }
    let report = ViscousReport { network: sol.report.clone(), matching, max_second_difference: d2, min_diffusion: min_mu };
    Ok((sol, report))
}
