//! Property checks for computed solutions: the a-priori bound `C₀`, the
//! barrier pair `ψ⁻ ≤ u ≤ ψ⁺`, pointwise comparison, grid-convergence
//! orders and manufactured sources.

use serde::{Deserialize, Serialize};

use crate::edge_solver::measure_modulus;
use crate::grid_core::{nonlocal_apply, Discretization, Grid, GridFunction};
use crate::junction_solver::{solve_dirichlet, DirichletOptions};
use crate::levy_kernels::{KernelForm, KernelSpec};
use crate::net_graph::{NetPoint, Network};
use crate::problem::Coef;
use crate::quadrature;
use crate::KhjError;

/// `(max|H(x,0) − f(x)| + |θ| + max|h|) / min(λ, 1)`.
pub fn c0_constant(lambda: f64, h0_max: f64, theta: f64, h_max: f64) -> f64 {
    (h0_max + theta.abs() + h_max) / lambda.min(1.0)
}

/// `C₀` for a discretized problem, with the source folded into the
/// Hamiltonian term.
pub fn c0_for(disc: &Discretization, theta: f64) -> f64 {
    let mut h0 = 0.0f64;
    for e in 0..disc.n_edges() {
        for (m, &x) in disc.x[e].iter().enumerate() {
            h0 = h0.max((disc.hams[e].eval(x, 0.0) - disc.f[e][m]).abs());
        }
    }
    let hmax = disc.net.vertices().iter().filter_map(|v| v.dirichlet_value).fold(0.0f64, |a, b| a.max(b.abs()));
    c0_constant(disc.lambda, h0, theta, hmax)
}

/// `L(x − x^{1+α})` on `[0, δ]`, constant beyond.
pub fn psi(l: f64, delta: f64, alpha: f64, x: f64) -> f64 {
    let y = x.clamp(0.0, delta);
    l * (y - y.powf(1.0 + alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub alpha: f64,
    pub l: f64,
    pub delta: f64,
    pub l_eps: Option<f64>,
    pub delta_eps: Option<f64>,
    pub c0: f64,
    pub c_sigma: f64,
    /// Why the lower barrier was dropped, if it was.
    pub note: Option<String>,
}

/// Constants of the barrier pair for vertex value `theta` at the interior
/// vertices.
pub fn barrier_constants(disc: &Discretization, theta: f64, alpha: f64) -> Barrier {
    let k = &disc.kernels;
    let (sigma, lam_k) = (k.sigma, k.bound);
    let ch = disc.hams.iter().map(|h| h.c_h).fold(1.0, f64::max);
    let n = (0..disc.net.n_vertices()).map(|v| disc.net.incidence(v).len()).max().unwrap_or(1) as f64;
    let a_bar = disc.net.max_length();
    let f_max = disc.f.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    let h_max = disc.net.vertices().iter().filter_map(|v| v.dirichlet_value).fold(0.0f64, |a, b| a.max(b.abs()));
    let c0 = c0_for(disc, theta);
    let lead = 2f64.powf(1.0 - sigma) / (1.0 - sigma);
    let c_sigma = n * lam_k * (lead + a_bar.ln().max(0.0)).max(1.0);
    let nonlocal = |d: f64| n * lam_k * (lead + a_bar.ln() - d.ln()) * d.powf(1.0 - sigma);
    let mut delta = (0.99 * (2.0 * (1.0 + alpha)).powf(-1.0 / alpha)).min(0.5 * disc.net.min_length());
    while nonlocal(delta) > 1.0 / (4.0 * ch) && delta > 1e-300 {
        delta *= 0.5;
    }
    let lam = disc.lambda;
    let l = (8.0 * ch * ch)
        .max(8.0 * ch * (lam * theta.abs() + f_max) * (1.0 + 1e-12))
        .max(2.0 * (c0 + theta.abs().max(h_max)) / delta);
    let (mut l_eps, mut delta_eps, mut note) = (None, None, None);
    let eps = disc.epsilon + disc.mu_base.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    if eps > 0.0 {
        let de = (eps * (1.0 + alpha) * alpha / (c_sigma + ch + 1.0))
            .powf(1.0 / (1.0 - alpha))
            .min(0.99 * (2.0 * (1.0 + alpha)).powf(-1.0 / alpha))
            .min(0.5 * disc.net.min_length());
        let le = (lam * theta.abs() + ch + f_max).max(2.0 * (theta.abs().max(h_max) + c0) / de);
        delta_eps = Some(de);
        l_eps = Some(le);
    } else {
        note = Some("no ellipticity: lower barrier omitted".into());
    }
    Barrier { alpha, l, delta, l_eps, delta_eps, c0, c_sigma, note }
}

/// Nodal `ψ⁻` (if available) and `ψ⁺` for vertex values `vertex`.
pub fn build_barriers(disc: &Discretization, vertex: &[f64], b: &Barrier) -> (Option<GridFunction>, GridFunction) {
    let g = &disc.grid;
    let ends = g.ends.clone();
    let upper = GridFunction::from_fn(g, |e, x| {
        let (t, h) = ends[e];
        let a = g.edges[e].length;
        b.c0.min(vertex[t] + psi(b.l, b.delta, b.alpha, x)).min(vertex[h] + psi(b.l, b.delta, b.alpha, a - x))
    });
    let lower = match (b.l_eps, b.delta_eps) {
        (Some(le), Some(de)) => Some(GridFunction::from_fn(g, |e, x| {
            let (t, h) = ends[e];
            let a = g.edges[e].length;
            (-b.c0).max(vertex[t] - psi(le, de, b.alpha, x)).max(vertex[h] - psi(le, de, b.alpha, a - x))
        })),
        _ => None,
    };
    (lower, upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub edge: usize,
    pub node: usize,
    pub excess: f64,
}

/// Nodes where `ψ⁻ ≤ u ≤ ψ⁺` fails by more than `tol`.
pub fn barrier_check(u: &GridFunction, lower: Option<&GridFunction>, upper: &GridFunction, tol: f64) -> Vec<Violation> {
    let mut out = ordering_violations(u, upper, tol);
    if let Some(lo) = lower {
        out.extend(ordering_violations(lo, u, tol));
    }
    out
}

/// Nodes where `a ≤ b` fails by more than `tol`.
pub fn ordering_violations(a: &GridFunction, b: &GridFunction, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in 0..a.interior.len() {
        let (va, vb) = (a.edge_values(e), b.edge_values(e));
        for m in 0..va.len() {
            if va[m] > vb[m] + tol {
                out.push(Violation { edge: e, node: m, excess: va[m] - vb[m] });
            }
        }
    }
    out
}

/// Solves two Dirichlet problems on the same grid and lists the nodes
/// where `u₁ ≤ u₂` fails by more than `tol`.
pub fn comparison_test(
    d1: &Discretization,
    vertex1: &[f64],
    d2: &Discretization,
    vertex2: &[f64],
    opts: &DirichletOptions,
    tol: f64,
) -> Result<Vec<Violation>, KhjError> {
    if d1.grid.edges.iter().zip(&d2.grid.edges).any(|(a, b)| a.n_cells != b.n_cells || a.length != b.length)
        || d1.n_edges() != d2.n_edges()
    {
        return Err(KhjError::Alignment("comparison needs a shared grid".into()));
    }
    let (u1, _) = solve_dirichlet(d1, vertex1, None, opts)?;
    let (u2, _) = solve_dirichlet(d2, vertex2, None, opts)?;
    Ok(ordering_violations(&u1, &u2, tol))
}

/// `C^{0,γ}` seminorm over every edge of the nodal image `I^η u` of an
/// exact function.
pub fn nonlocal_image_seminorm<U: Fn(usize, f64) -> f64>(
    net: &Network,
    k: &KernelSpec,
    grid: &Grid,
    u: U,
    gamma: f64,
) -> Result<f64, KhjError> {
    let gu = GridFunction::from_fn(grid, u);
    let mut s = 0.0f64;
    for (e, g) in grid.edges.iter().enumerate() {
        let img = (0..=g.n_cells)
            .map(|m| nonlocal_apply(&gu, net, k, grid, e, m, 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        s = s.max(measure_modulus(&img, &g.nodes(), gamma));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of log error against log h; `None` when every
    /// error is at rounding level.
    pub order: Option<f64>,
    /// Orders between consecutive levels.
    pub local_orders: Vec<f64>,
}

pub fn convergence_table(h: &[f64], errors: &[f64]) -> Result<ConvergenceTable, KhjError> {
    if h.len() < 3 || h.len() != errors.len() {
        return Err(KhjError::Precondition("a convergence study needs at least 3 grid levels".into()));
    }
    let exact = errors.iter().all(|&e| e < 1e-12);
    let local_orders = (1..h.len()).map(|i| (errors[i - 1] / errors[i]).ln() / (h[i - 1] / h[i]).ln()).collect();
    let order = if exact {
        None
    } else {
        let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|v| v.max(1e-300).ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Some(sxy / sxx)
    };
    Ok(ConvergenceTable { h: h.to_vec(), errors: errors.to_vec(), order, local_orders })
}

/// Runs `solve(h)` returning a max-error for each spacing and fits the order.
pub fn convergence_study<F>(hs: &[f64], mut solve: F) -> Result<ConvergenceTable, KhjError>
where
    F: FnMut(f64) -> Result<f64, KhjError>,
{
    let errors = hs.iter().map(|&h| solve(h)).collect::<Result<Vec<_>, _>>()?;
    convergence_table(hs, &errors)
}

/// Radii where the truncated kernel has kinks.
fn radius_breaks(k: &KernelSpec, e: usize, f: usize, x: f64) -> Vec<f64> {
    let mut r = Vec::new();
    let cap = k.cap();
    match k.form(e, f) {
        KernelForm::Model { c } => {
            if let Some(cap) = cap {
                let cv = c.eval(x);
                if cv > 0.0 {
                    r.push((cv / cap).powf(1.0 / (1.0 + k.sigma)));
                }
            }
        }
        KernelForm::Tabulated { r: rs, .. } => {
            r.extend(rs.iter().copied());
            if let Some(cap) = cap {
                // crossover may fall anywhere; sample densely in radius
                let top = rs[rs.len() - 1].max(1.0 / cap);
                r.extend((1..200).map(|i| top * i as f64 / 200.0));
            }
        }
        KernelForm::Zero => {}
    }
    r
}

/// `∫_F (u(z) − u(x)) ν^η(x, ρ(x, z)) dz` summed over edges, by adaptive
/// quadrature of the exact function `u`.
pub fn nonlocal_oracle<U: Fn(usize, f64) -> f64>(net: &Network, k: &KernelSpec, u: &U, x: NetPoint, tol: f64) -> f64 {
    let ux = u(x.edge, x.arc);
    let mut s = 0.0;
    for f in 0..net.n_edges() {
        if k.is_zero(x.edge, f) {
            continue;
        }
        let (tf, hf) = net.ends(f);
        let a = net.length(f);
        let dxt = net.point_to_vertex(x, tf);
        let dxh = net.point_to_vertex(x, hf);
        let same = x.edge == f;
        let rho = |z: f64| {
            let mut r = (dxt + z).min(dxh + a - z);
            if same {
                r = r.min((x.arc - z).abs());
            }
            r
        };
        let mut br = vec![0.5 * (dxh + a - dxt)];
        if same {
            br.extend([x.arc, 0.5 * (x.arc - dxt), 0.5 * (x.arc + dxh + a)]);
        }
        for r in radius_breaks(k, x.edge, f, x.arc) {
            br.extend([r - dxt, a - (r - dxh)]);
            if same {
                br.extend([x.arc - r, x.arc + r]);
            }
        }
        let integrand = |z: f64| {
            let r = rho(z);
            if r <= 0.0 {
                return 0.0;
            }
            (u(f, z) - ux) * k.evaluate(x.edge, f, x.arc, r).unwrap_or(0.0)
        };
        s += quadrature::integrate_split(integrand, 0.0, a, &br, tol);
    }
    s
}

/// Exact derivatives of a manufactured solution on each edge.
pub struct Manufactured<'a> {
    pub u: &'a (dyn Fn(usize, f64) -> f64 + Sync),
    pub du: &'a (dyn Fn(usize, f64) -> f64 + Sync),
    pub d2u: &'a (dyn Fn(usize, f64) -> f64 + Sync),
}

/// Sources `f = λu − μu'' − I^η u + H(x, u')` at the grid nodes, with the
/// nonlocal term from the oracle quadrature of the same truncated kernel
/// the discretization uses. Returned as sampled coefficients per edge.
pub fn manufactured_source(disc: &Discretization, m: &Manufactured) -> Vec<Coef> {
    use rayon::prelude::*;
    (0..disc.n_edges())
        .map(|e| {
            let values: Vec<f64> = disc.x[e]
                .par_iter()
                .enumerate()
                .map(|(j, &x)| {
                    let i = nonlocal_oracle(&disc.net, &disc.kernels, &m.u, NetPoint { edge: e, arc: x }, 1e-12);
                    disc.lambda * (m.u)(e, x) - disc.mu(e, j) * (m.d2u)(e, x) - i + disc.hams[e].eval(x, (m.du)(e, x))
                })
                .collect();
            Coef::Samples { arc: disc.x[e].clone(), values }
        })
        .collect()
}

/// Max nodal error of `u` against an exact function.
pub fn max_error<U: Fn(usize, f64) -> f64>(u: &GridFunction, grid: &Grid, exact: U) -> f64 {
    u.samples(grid).into_iter().fold(0.0, |a, (e, x, v)| a.max((v - exact(e, x)).abs()))
}
