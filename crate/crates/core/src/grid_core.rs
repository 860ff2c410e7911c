//! Uniform per-edge grids, grid functions continuous at vertices, the
//! singular-kernel quadrature for the nonlocal operator, vertex stencils and
//! the discrete residual.
//!
//! The nonlocal operator is discretized by integrating the piecewise-linear
//! interpolant of `u` exactly against the (truncated) kernel: on every cell
//! the geodesic distance `rho(x, z)` is split into pieces where it is linear
//! in `z`, and each piece contributes the radial moments of the kernel to
//! the two hat functions of the cell.

use rayon::prelude::*;

use crate::hamiltonians::HamiltonianSpec;
use crate::levy_kernels::KernelSpec;
use crate::net_graph::{NetPoint, Network};
use crate::problem::{FluxCoef, Problem};
use crate::KhjError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGrid {
    pub n_cells: usize,
    pub h: f64,
    pub length: f64,
}

impl EdgeGrid {
    pub fn new(length: f64, n_cells: usize) -> Self {
        Self { n_cells, h: length / n_cells as f64, length }
    }

    pub fn x(&self, m: usize) -> f64 {
        if m == self.n_cells {
            self.length
        } else {
            m as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|m| self.x(m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub edges: Vec<EdgeGrid>,
    pub ends: Vec<(usize, usize)>,
    pub n_vertices: usize,
}

impl Grid {
    pub fn new(net: &Network, n_cells: &[usize]) -> Result<Self, KhjError> {
        if n_cells.len() != net.n_edges() {
            return Err(KhjError::Precondition("one cell count per edge required".into()));
        }
        if let Some(k) = n_cells.iter().position(|&n| n < 4) {
            return Err(KhjError::Precondition(format!("edge {k} needs at least 4 cells")));
        }
        Ok(Self {
            edges: (0..net.n_edges()).map(|e| EdgeGrid::new(net.length(e), n_cells[e])).collect(),
            ends: (0..net.n_edges()).map(|e| net.ends(e)).collect(),
            n_vertices: net.n_vertices(),
        })
    }

    pub fn max_h(&self) -> f64 {
        self.edges.iter().map(|g| g.h).fold(0.0, f64::max)
    }
}

/// Nodal values on every edge. Vertex values are stored once and shared by
/// all incident edges, so continuity at vertices holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub vertex: Vec<f64>,
    /// Values at nodes `1..n_cells` of each edge.
    pub interior: Vec<Vec<f64>>,
    ends: Vec<(usize, usize)>,
}

impl GridFunction {
    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            vertex: vec![c; grid.n_vertices],
            interior: grid.edges.iter().map(|g| vec![c; g.n_cells - 1]).collect(),
            ends: grid.ends.clone(),
        }
    }

    /// Samples `f(edge, arc)`; vertex values come from the first incident
    /// edge in canonical order.
    pub fn from_fn<F: Fn(usize, f64) -> f64>(grid: &Grid, f: F) -> Self {
        let mut u = Self::constant(grid, 0.0);
        let mut set = vec![false; grid.n_vertices];
        for (e, g) in grid.edges.iter().enumerate() {
            let (t, h) = grid.ends[e];
            if !set[t] {
                u.vertex[t] = f(e, 0.0);
                set[t] = true;
            }
            if !set[h] {
                u.vertex[h] = f(e, g.length);
                set[h] = true;
            }
            for m in 1..g.n_cells {
                u.interior[e][m - 1] = f(e, g.x(m));
            }
        }
        u
    }

    /// Builds from full per-edge arrays, checking vertex consistency.
    pub fn from_edge_arrays(grid: &Grid, arrays: &[Vec<f64>], tol: f64) -> Result<Self, KhjError> {
        if arrays.len() != grid.edges.len() {
            return Err(KhjError::Alignment(format!("expected {} edges, got {}", grid.edges.len(), arrays.len())));
        }
        let mut u = Self::constant(grid, 0.0);
        let mut set: Vec<Option<f64>> = vec![None; grid.n_vertices];
        for (e, g) in grid.edges.iter().enumerate() {
            let a = &arrays[e];
            if a.len() != g.n_cells + 1 {
                return Err(KhjError::Alignment(format!("edge {e}: expected {} nodes, got {}", g.n_cells + 1, a.len())));
            }
            let (t, h) = grid.ends[e];
            for (v, val) in [(t, a[0]), (h, a[g.n_cells])] {
                match set[v] {
                    None => set[v] = Some(val),
                    Some(prev) if (prev - val).abs() > tol => {
                        return Err(KhjError::Alignment(format!("vertex {v}: inconsistent values {prev} and {val}")))
                    }
                    _ => {}
                }
            }
            u.interior[e].copy_from_slice(&a[1..g.n_cells]);
        }
        for (v, s) in set.into_iter().enumerate() {
            u.vertex[v] = s.unwrap_or(0.0);
        }
        Ok(u)
    }

    pub fn n_nodes(&self, e: usize) -> usize {
        self.interior[e].len() + 2
    }

    pub fn value(&self, e: usize, m: usize) -> f64 {
        let n = self.interior[e].len() + 1;
        if m == 0 {
            self.vertex[self.ends[e].0]
        } else if m == n {
            self.vertex[self.ends[e].1]
        } else {
            self.interior[e][m - 1]
        }
    }

    /// All nodal values of edge `e`, endpoints included.
    pub fn edge_values(&self, e: usize) -> Vec<f64> {
        let (t, h) = self.ends[e];
        let mut v = Vec::with_capacity(self.interior[e].len() + 2);
        v.push(self.vertex[t]);
        v.extend_from_slice(&self.interior[e]);
        v.push(self.vertex[h]);
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.vertex.iter().chain(self.interior.iter().flatten()).fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.vertex
            .iter()
            .zip(&other.vertex)
            .chain(self.interior.iter().flatten().zip(other.interior.iter().flatten()))
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            vertex: self.vertex.iter().map(|&v| f(v)).collect(),
            interior: self.interior.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect(),
            ends: self.ends.clone(),
        }
    }

    /// `(edge index, arc, value)` rows in canonical order.
    pub fn samples(&self, grid: &Grid) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for (e, g) in grid.edges.iter().enumerate() {
            for (m, v) in self.edge_values(e).into_iter().enumerate() {
                out.push((e, g.x(m), v));
            }
        }
        out
    }
}

/// Dense weights `W[m][k]` of one ordered edge pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBlock {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl WeightBlock {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }
}

/// Weights of `∫_{rho in [rmin, rmax)} (u(z) - u(x)) nu(x, rho) dz` over edge
/// `f` for the point `x`, as coefficients of the nodal values of `u` on `f`.
pub fn row_weights(
    net: &Network,
    k: &KernelSpec,
    g: &EdgeGrid,
    x: NetPoint,
    f: usize,
    rmin: f64,
    rmax: f64,
) -> Vec<f64> {
    let mut w = vec![0.0; g.n_cells + 1];
    if k.is_zero(x.edge, f) || rmax <= rmin {
        return w;
    }
    let (tf, hf) = net.ends(f);
    let a = g.length;
    let dxt = net.point_to_vertex(x, tf);
    let dxh = net.point_to_vertex(x, hf);
    let same = x.edge == f;
    let xm = x.arc;
    let rho = |z: f64| {
        let mut r = (dxt + z).min(dxh + a - z);
        if same {
            r = r.min((xm - z).abs());
        }
        r
    };
    let mut cand = vec![0.5 * (dxh + a - dxt)];
    if same {
        cand.extend([xm, 0.5 * (xm - dxt), 0.5 * (xm + dxh + a)]);
    }
    let h = g.h;
    let mut pts = Vec::with_capacity(8);
    for c in 0..g.n_cells {
        let (z0, z1) = (g.x(c), g.x(c + 1));
        pts.clear();
        pts.push(z0);
        pts.extend(cand.iter().copied().filter(|&p| p > z0 && p < z1));
        pts.push(z1);
        pts.sort_by(f64::total_cmp);
        for s in pts.windows(2) {
            let (z_lo, z_hi) = (s[0], s[1]);
            if z_hi <= z_lo {
                continue;
            }
            let r0 = rho(z_lo);
            let sgn = if rho(z_hi) >= r0 { 1.0 } else { -1.0 };
            // rho(z) = r0 + sgn (z - z_lo); keep rho in [rmin, rmax)
            let (za, zb) = if sgn > 0.0 {
                (z_lo.max(z_lo + rmin - r0), z_hi.min(z_lo + rmax - r0))
            } else {
                (z_lo.max(z_lo + r0 - rmax), z_hi.min(z_lo + r0 - rmin))
            };
            if zb <= za {
                continue;
            }
            let ra = r0 + sgn * (za - z_lo);
            let rb = ra + sgn * (zb - za);
            let (m0, m1) = k.moments(x.edge, f, xm, ra.min(rb), ra.max(rb));
            let j1 = sgn * (m1 - ra * m0);
            let first = (za - z0) * m0 + j1;
            w[c + 1] += first / h;
            w[c] += m0 - first / h;
        }
    }
    w
}

/// The nonlocal operator at node `m` of edge `e` with the ball of radius
/// `delta` around the node excluded.
pub fn nonlocal_apply(
    u: &GridFunction,
    net: &Network,
    k: &KernelSpec,
    grid: &Grid,
    e: usize,
    m: usize,
    delta: f64,
) -> Result<f64, KhjError> {
    if k.eta.is_none() && delta < grid.edges[e].h * (1.0 - 1e-12) {
        return Err(KhjError::Precondition("untruncated kernel needs an exclusion radius of at least h".into()));
    }
    Ok(nonlocal_range(u, net, k, grid, e, m, delta, f64::INFINITY))
}

/// Contribution of distances in `[rmin, rmax)`.
#[allow(clippy::too_many_arguments)]
pub fn nonlocal_range(
    u: &GridFunction,
    net: &Network,
    k: &KernelSpec,
    grid: &Grid,
    e: usize,
    m: usize,
    rmin: f64,
    rmax: f64,
) -> f64 {
    let x = NetPoint { edge: e, arc: grid.edges[e].x(m) };
    let um = u.value(e, m);
    let mut s = 0.0;
    for (f, g) in grid.edges.iter().enumerate() {
        let w = row_weights(net, k, g, x, f, rmin, rmax);
        let vals = u.edge_values(f);
        s += w.iter().zip(&vals).map(|(wk, vk)| wk * (vk - um)).sum::<f64>();
    }
    s
}

/// Which end of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Tail,
    Head,
}

/// Inward derivative at one end of an edge from the second-order one-sided
/// stencil.
pub fn edge_inward_slope(vals: &[f64], h: f64, end: End) -> Result<f64, KhjError> {
    let n = vals.len();
    if n < 3 {
        return Err(KhjError::Precondition("vertex slope needs at least 3 nodes".into()));
    }
    Ok(match end {
        End::Tail => (-3.0 * vals[0] + 4.0 * vals[1] - vals[2]) / (2.0 * h),
        End::Head => (-3.0 * vals[n - 1] + 4.0 * vals[n - 2] - vals[n - 3]) / (2.0 * h),
    })
}

/// Inward derivative `i_E(v) u_x(v)` of `u` along edge `e` at vertex `v`.
pub fn vertex_slope(u: &GridFunction, grid: &Grid, e: usize, v: usize) -> Result<f64, KhjError> {
    let (t, h) = grid.ends[e];
    let end = if v == t {
        End::Tail
    } else if v == h {
        End::Head
    } else {
        return Err(KhjError::Lookup(format!("vertex {v} is not an endpoint of edge {e}")));
    };
    edge_inward_slope(&u.edge_values(e), grid.edges[e].h, end)
}

/// Assembled nonlocal operator with the kernel truncated: blocks per ordered
/// edge pair (absent for zero pairs) and their row sums.
#[derive(Debug, Clone)]
pub struct NonlocalOp {
    n_edges: usize,
    blocks: Vec<Option<WeightBlock>>,
    /// `mass[e * n + f][m]`: discrete tail mass of pair (e, f) at node m.
    mass: Vec<Vec<f64>>,
}

impl NonlocalOp {
    pub fn assemble(net: &Network, k: &KernelSpec, grid: &Grid) -> Result<Self, KhjError> {
        if k.eta.is_none() {
            return Err(KhjError::Precondition("assembled operator needs a truncated kernel".into()));
        }
        let n = grid.edges.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|e| (0..n).map(move |f| (e, f))).collect();
        let built: Vec<(Option<WeightBlock>, Vec<f64>)> = pairs
            .par_iter()
            .map(|&(e, f)| {
                let ge = &grid.edges[e];
                let gf = &grid.edges[f];
                if k.is_zero(e, f) {
                    return (None, vec![0.0; ge.n_cells + 1]);
                }
                let rows: Vec<Vec<f64>> = (0..=ge.n_cells)
                    .into_par_iter()
                    .map(|m| row_weights(net, k, gf, NetPoint { edge: e, arc: ge.x(m) }, f, 0.0, f64::INFINITY))
                    .collect();
                let mass = rows.iter().map(|r| r.iter().sum()).collect();
                let data = rows.into_iter().flatten().collect();
                (Some(WeightBlock { rows: ge.n_cells + 1, cols: gf.n_cells + 1, data }), mass)
            })
            .collect();
        let (blocks, mass) = built.into_iter().unzip();
        Ok(Self { n_edges: n, blocks, mass })
    }

    pub fn block(&self, e: usize, f: usize) -> Option<&WeightBlock> {
        self.blocks[e * self.n_edges + f].as_ref()
    }

    pub fn mass(&self, e: usize, f: usize) -> &[f64] {
        &self.mass[e * self.n_edges + f]
    }

    /// `Σ_{F != e} mass(e, F)` at each node of `e`.
    pub fn exterior_mass(&self, e: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.mass(e, e).len()];
        for f in (0..self.n_edges).filter(|&f| f != e) {
            for (o, m) in out.iter_mut().zip(self.mass(e, f)) {
                *o += m;
            }
        }
        out
    }

    pub fn is_coupled(&self, e: usize) -> bool {
        (0..self.n_edges).any(|f| f != e && self.block(e, f).is_some())
    }

    /// `I_e u` at node `m`.
    pub fn apply(&self, u: &GridFunction, e: usize, m: usize) -> f64 {
        let um = u.value(e, m);
        let mut s = 0.0;
        for f in 0..self.n_edges {
            if let Some(b) = self.block(e, f) {
                let vals = u.edge_values(f);
                s += b.row(m).iter().zip(&vals).map(|(w, v)| w * (v - um)).sum::<f64>();
            }
        }
        s
    }

    /// `Σ_k W_{e f}[m][k] u_f[k]` for every node `m` of `e`.
    pub fn exterior_source(&self, e: usize, f: usize, uf: &[f64]) -> Option<Vec<f64>> {
        self.block(e, f).map(|b| (0..b.rows).map(|m| b.row(m).iter().zip(uf).map(|(w, v)| w * v).sum()).collect())
    }
}

/// Everything a solver needs on a fixed grid: nodal coefficients and the
/// assembled nonlocal operator.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub net: Network,
    pub grid: Grid,
    pub kernels: KernelSpec,
    pub hams: Vec<HamiltonianSpec>,
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub flux: FluxCoef,
    pub x: Vec<Vec<f64>>,
    /// `mu_E(x_m)` without epsilon.
    pub mu_base: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub op: NonlocalOp,
}

impl Discretization {
    pub fn new(p: &Problem) -> Result<Self, KhjError> {
        let grid = Grid::new(&p.network, &p.n_cells)?;
        let eta = p.eta();
        let kernels = p.kernels.clone().with_eta(Some(eta));
        let op = NonlocalOp::assemble(&p.network, &kernels, &grid)?;
        let x: Vec<Vec<f64>> = grid.edges.iter().map(|g| g.nodes()).collect();
        let mu_base = x.iter().enumerate().map(|(e, xs)| xs.iter().map(|&v| p.diffusion[e].eval(v)).collect()).collect();
        let f = x.iter().enumerate().map(|(e, xs)| xs.iter().map(|&v| p.sources[e].eval(v)).collect()).collect();
        Ok(Self {
            net: p.network.clone(),
            grid,
            kernels,
            hams: p.hamiltonians.clone(),
            lambda: p.config.lambda,
            epsilon: p.config.epsilon,
            eta,
            flux: p.config.flux,
            x,
            mu_base,
            f,
            op,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.grid.edges.len()
    }

    pub fn mu(&self, e: usize, m: usize) -> f64 {
        self.mu_base[e][m] + self.epsilon
    }

    pub fn mu_vec(&self, e: usize) -> Vec<f64> {
        self.mu_base[e].iter().map(|m| m + self.epsilon).collect()
    }

    /// Viscosity coefficient of the numerical flux at node `m`.
    pub fn flux_coef(&self, e: usize, m: usize) -> f64 {
        let ch = self.hams[e].c_h;
        match self.flux {
            FluxCoef::Global => ch,
            FluxCoef::Adaptive => (ch - 2.0 * self.mu(e, m) / self.grid.edges[e].h).max(0.0),
        }
    }

    /// `λu − μ u_xx − I u + F(p⁻, p⁺) − f` at interior node `m` of edge `e`.
    pub fn residual(&self, u: &GridFunction, e: usize, m: usize) -> Result<f64, KhjError> {
        let g = &self.grid.edges[e];
        if m == 0 || m >= g.n_cells {
            return Err(KhjError::Precondition(format!("node {m} of edge {e} is not interior")));
        }
        let (ul, um, ur) = (u.value(e, m - 1), u.value(e, m), u.value(e, m + 1));
        let h = g.h;
        let pm = (um - ul) / h;
        let pp = (ur - um) / h;
        Ok(self.lambda * um - self.mu(e, m) * (ul - 2.0 * um + ur) / (h * h) - self.op.apply(u, e, m)
            + self.hams[e].lf_flux_with(self.x[e][m], pm, pp, self.flux_coef(e, m))
            - self.f[e][m])
    }

    /// Max-norm of the residual over all interior nodes.
    pub fn residual_norm(&self, u: &GridFunction) -> f64 {
        (0..self.n_edges())
            .flat_map(|e| (1..self.grid.edges[e].n_cells).map(move |m| (e, m)))
            .map(|(e, m)| self.residual(u, e, m).map(f64::abs).unwrap_or(f64::NAN))
            .fold(0.0, f64::max)
    }

    /// Boundary-vertex data in canonical vertex order (NaN at interior ones).
    pub fn boundary_values(&self) -> Vec<f64> {
        self.net.vertices().iter().map(|v| v.dirichlet_value.unwrap_or(f64::NAN)).collect()
    }
}
