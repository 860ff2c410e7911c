//! Flux-limited junction conditions: the operator
//! `FL⁻ = min_p max{ max_i G_i⁻(p_i), Σ −p_i − B }`, critical slopes at the
//! junction and the sub/supersolution checks built from them.
//!
//! Every edge is seen in the inward coordinate from the junction `O`, so an
//! edge whose head is `O` uses `H̃(p) = H(x_O, −p)`.

use serde::{Deserialize, Serialize};

use crate::grid_core::{Discretization, GridFunction};
use crate::hamiltonians::HamiltonianSpec;
use crate::junction_solver::star_center;
use crate::KhjError;

/// Hamiltonian of one edge at the junction in the inward coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionHam {
    pub ham: HamiltonianSpec,
    /// Arc coordinate of `O` on the edge.
    pub x: f64,
    /// `+1` if `O` is the tail, `−1` if the head.
    pub orient: f64,
}

impl JunctionHam {
    pub fn eval(&self, p: f64) -> f64 {
        self.ham.eval(self.x, self.orient * p)
    }

    pub fn p0(&self) -> Result<f64, KhjError> {
        Ok(self.orient * self.ham.p0(self.x)?)
    }

    pub fn h_minus(&self, p: f64) -> Result<f64, KhjError> {
        Ok(self.eval(p.max(self.p0()?)))
    }

    pub fn h_plus(&self, p: f64) -> Result<f64, KhjError> {
        Ok(self.eval(p.min(self.p0()?)))
    }
}

/// Frozen junction data: base values `g_i`, Hamiltonians and the flux `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionData {
    pub g: Vec<f64>,
    pub hams: Vec<JunctionHam>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FLState {
    pub g: Vec<f64>,
    pub p0: Vec<f64>,
    pub p_tilde: Vec<f64>,
    pub fl_minus: f64,
    /// Exclusion radius of the nonlocal evaluation; 0 means the full
    /// operator.
    pub delta: f64,
    /// Optimum attained on a set; `p_tilde` splits the deficit equally
    /// among the edges at the lower level.
    pub flat: bool,
}

impl FLState {
    /// Largest violation of `G_i⁻(p̃_i) = FL⁻ = Σ −p̃_i − B`.
    pub fn equalization_defect(&self, data: &JunctionData) -> Result<f64, KhjError> {
        let mut d = (-self.p_tilde.iter().sum::<f64>() - data.b - self.fl_minus).abs();
        for (i, h) in data.hams.iter().enumerate() {
            d = d.max((data.g[i] + h.h_minus(self.p_tilde[i])? - self.fl_minus).abs());
        }
        Ok(d)
    }
}

/// Largest `p ≥ p0` with `H(p) ≤ level` on the nondecreasing branch.
fn inverse_minus(h: &JunctionHam, p0: f64, level: f64) -> f64 {
    if h.eval(p0) >= level {
        return p0;
    }
    let mut r = 1.0;
    while h.eval(p0 + r) < level {
        r *= 2.0;
        if r > 1e15 {
            break;
        }
    }
    let (mut a, mut b) = (p0, p0 + r);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if h.eval(m) < level {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Equalization: for a level `t` put `p_i(t)` on the increasing branch of
/// `g_i + H_i⁻` at height `t`; `φ(t) = Σ −p_i(t) − B − t` is strictly
/// decreasing above `t_min = max_i (g_i + H_i(p⁰_i))` and its root is `FL⁻`.
pub fn compute_fl_minus(data: &JunctionData) -> Result<FLState, KhjError> {
    let n = data.hams.len();
    if n == 0 || data.g.len() != n {
        return Err(KhjError::Precondition("junction data needs one base value per edge".into()));
    }
    let p0: Vec<f64> = data.hams.iter().map(|h| h.p0()).collect::<Result<_, _>>()?;
    let low: Vec<f64> = (0..n).map(|i| data.g[i] + data.hams[i].eval(p0[i])).collect();
    let t_min = low.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slopes = |t: f64| -> Vec<f64> { (0..n).map(|i| inverse_minus(&data.hams[i], p0[i], t - data.g[i])).collect() };
    let phi = |t: f64| -> f64 { -slopes(t).iter().sum::<f64>() - data.b - t };
    let phi_min = phi(t_min);
    if phi_min <= 0.0 {
        let mut p = slopes(t_min);
        let attaining: Vec<usize> = (0..n).filter(|&i| low[i] >= t_min - 1e-14 * t_min.abs().max(1.0)).collect();
        let share = -phi_min / attaining.len() as f64;
        for &i in &attaining {
            p[i] -= share;
        }
        return Ok(FLState { g: data.g.clone(), p0: p0.clone(), p_tilde: p, fl_minus: t_min, delta: 0.0, flat: phi_min < 0.0 });
    }
    let mut step = 1.0;
    while phi(t_min + step) > 0.0 {
        step *= 2.0;
        if step > 1e15 {
            return Err(KhjError::Bracketing("no upper level for the flux limiter".into()));
        }
    }
    let (mut a, mut b) = (t_min, t_min + step);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if phi(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let t = 0.5 * (a + b);
    let p_tilde = slopes(t);
    Ok(FLState { g: data.g.clone(), p0: p0.clone(), p_tilde, fl_minus: t, delta: 0.0, flat: false })
}

/// Half-width of the search box for the grid oracle, from coercivity.
pub fn search_radius(data: &JunctionData) -> Result<f64, KhjError> {
    let n = data.hams.len() as f64;
    let mut scale = data.b.abs() + n;
    let mut p0max = 0.0f64;
    let mut ch = 1.0f64;
    for (i, h) in data.hams.iter().enumerate() {
        let p0 = h.p0()?;
        p0max = p0max.max(p0.abs());
        scale += data.g[i].abs() + h.eval(p0).abs();
        ch = ch.max(h.ham.c_h);
    }
    Ok(1.0 + p0max + (ch + 1.0) * scale)
}

/// Brute-force `min_p max{ max_i G_i⁻(p_i), Σ −p_i − B }` on a
/// `points`-per-axis grid over `[−P, P]^N`, re-gridded twice around the
/// best point. Returns the value and the minimizer.
pub fn grid_search(data: &JunctionData, radius: f64, points: usize) -> Result<(f64, Vec<f64>), KhjError> {
    let n = data.hams.len();
    if n == 0 || n > 3 {
        return Err(KhjError::Unsupported("grid search supports 1 to 3 edges".into()));
    }
    let mut centre = vec![0.0; n];
    let mut half = radius;
    let mut best = (f64::INFINITY, centre.clone());
    for _ in 0..3 {
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..points).map(|k| centre[i] - half + 2.0 * half * k as f64 / (points - 1) as f64).collect())
            .collect();
        let gm: Vec<Vec<f64>> = (0..n)
            .map(|i| axes[i].iter().map(|&p| Ok(data.g[i] + data.hams[i].h_minus(p)?)).collect::<Result<Vec<_>, KhjError>>())
            .collect::<Result<_, _>>()?;
        let len = |i: usize| if i < n { points } else { 1 };
        for a in 0..len(0) {
            for b in 0..len(1) {
                for c in 0..len(2) {
                    let idx = [a, b, c];
                    let mut m = f64::NEG_INFINITY;
                    let mut s = -data.b;
                    for i in 0..n {
                        m = m.max(gm[i][idx[i]]);
                        s -= axes[i][idx[i]];
                    }
                    let v = m.max(s);
                    if v < best.0 {
                        best = (v, (0..n).map(|i| axes[i][idx[i]]).collect());
                    }
                }
            }
        }
        centre = best.1.clone();
        half = 4.0 * half / (points - 1) as f64;
    }
    Ok(best)
}

/// `compute_fl_minus` cross-checked against the grid oracle; disagreement
/// above `tol` is a consistency error.
pub fn compute_fl_minus_checked(data: &JunctionData, points: usize, tol: f64) -> Result<FLState, KhjError> {
    let s = compute_fl_minus(data)?;
    let (v, _) = grid_search(data, search_radius(data)?, points)?;
    if (v - s.fl_minus).abs() > tol {
        return Err(KhjError::Consistency(format!("flux limiter {} disagrees with grid search {}", s.fl_minus, v)));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSlopes {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// `|est − (2q(h) − q(2h))|` per edge.
    pub uncertainty: Vec<f64>,
}

/// One-sided quotients `q(s) = (u(s) − u(0))/s` at `s ∈ {h, 2h, 4h}`
/// extrapolated to `s → 0` with `(8q(h) − 6q(2h) + q(4h))/3`, which is
/// exact for cubics.
pub fn richardson_slope(vals: &[f64], h: f64) -> Result<(f64, f64), KhjError> {
    if vals.len() < 5 {
        return Err(KhjError::Precondition("critical slopes need at least 5 nodes per edge".into()));
    }
    let q = |k: usize| (vals[k] - vals[0]) / (k as f64 * h);
    let est = (8.0 * q(1) - 6.0 * q(2) + q(4)) / 3.0;
    let lower_order = 2.0 * q(1) - q(2);
    Ok((est, (est - lower_order).abs()))
}

/// Edge values read outward from `O`.
fn inward_values(u: &GridFunction, disc: &Discretization, e: usize, o: usize) -> Vec<f64> {
    let mut v = u.edge_values(e);
    if disc.grid.ends[e].0 != o {
        v.reverse();
    }
    v
}

/// Critical slopes of `u` at the junction, in the inward coordinate of
/// each edge. Grid functions are piecewise linear so upper and lower
/// slopes coincide; the spread is reported as uncertainty.
pub fn critical_slopes(u: &GridFunction, disc: &Discretization) -> Result<CriticalSlopes, KhjError> {
    let o = star_center(disc)?;
    let mut est = Vec::new();
    let mut unc = Vec::new();
    for e in 0..disc.n_edges() {
        let (s, d) = richardson_slope(&inward_values(u, disc, e, o), disc.grid.edges[e].h)?;
        est.push(s);
        unc.push(d);
    }
    Ok(CriticalSlopes { upper: est.clone(), lower: est, uncertainty: unc })
}

/// Junction data of `u`: `g_i = λu(O) − μ_i(O) u_i''(O) − I_i u(O) − f_i(O)`.
/// The second-derivative term is a one-sided third-order estimate and
/// vanishes for degenerate problems.
pub fn junction_data(u: &GridFunction, disc: &Discretization) -> Result<JunctionData, KhjError> {
    let o = star_center(disc)?;
    let uo = u.vertex[o];
    let mut g = Vec::new();
    let mut hams = Vec::new();
    for e in 0..disc.n_edges() {
        let n = disc.grid.edges[e].n_cells;
        let tail = disc.grid.ends[e].0 == o;
        let m = if tail { 0 } else { n };
        let h = disc.grid.edges[e].h;
        let v = inward_values(u, disc, e, o);
        let mu = disc.mu(e, m);
        let d2 = if mu > 0.0 && v.len() >= 4 { (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h) } else { 0.0 };
        g.push(disc.lambda * uo - mu * d2 - disc.op.apply(u, e, m) - disc.f[e][m]);
        hams.push(JunctionHam { ham: disc.hams[e].clone(), x: disc.x[e][m], orient: if tail { 1.0 } else { -1.0 } });
    }
    let b = disc.net.vertices()[o].kirchhoff_flux.unwrap_or(0.0);
    Ok(JunctionData { g, hams, b })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FLCheck {
    pub passed: bool,
    /// `max{ max_i G_i⁺(slope_i), FL⁻ }`; sub needs `≤ tol`, super `≥ −tol`.
    pub value: f64,
    pub g_plus: Vec<f64>,
    pub fl_minus: f64,
    pub slopes: Vec<f64>,
    pub tol: f64,
}

fn fl_value(data: &JunctionData, slopes: &[f64], fl: f64) -> Result<(f64, Vec<f64>), KhjError> {
    let gp: Vec<f64> =
        data.hams.iter().enumerate().map(|(i, h)| Ok(data.g[i] + h.h_plus(slopes[i])?)).collect::<Result<_, KhjError>>()?;
    let v = gp.iter().copied().fold(fl, f64::max);
    Ok((v, gp))
}

/// Flux-limited subsolution test at the upper critical slopes.
pub fn check_fl_subsolution(u: &GridFunction, disc: &Discretization, tol: f64) -> Result<FLCheck, KhjError> {
    let data = junction_data(u, disc)?;
    let s = critical_slopes(u, disc)?;
    let fl = compute_fl_minus(&data)?.fl_minus;
    let (value, g_plus) = fl_value(&data, &s.upper, fl)?;
    Ok(FLCheck { passed: value <= tol, value, g_plus, fl_minus: fl, slopes: s.upper, tol })
}

/// Flux-limited supersolution test at the lower critical slopes.
pub fn check_fl_supersolution(u: &GridFunction, disc: &Discretization, tol: f64) -> Result<FLCheck, KhjError> {
    let data = junction_data(u, disc)?;
    let s = critical_slopes(u, disc)?;
    let fl = compute_fl_minus(&data)?.fl_minus;
    let (value, g_plus) = fl_value(&data, &s.lower, fl)?;
    Ok(FLCheck { passed: value >= -tol, value, g_plus, fl_minus: fl, slopes: s.lower, tol })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FLReport {
    pub state: FLState,
    pub subsolution: FLCheck,
    pub supersolution: FLCheck,
}

pub fn fl_report(u: &GridFunction, disc: &Discretization, tol: f64) -> Result<FLReport, KhjError> {
    let state = compute_fl_minus(&junction_data(u, disc)?)?;
    Ok(FLReport {
        state,
        subsolution: check_fl_subsolution(u, disc, tol)?,
        supersolution: check_fl_supersolution(u, disc, tol)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_data(g: &[f64], b: f64) -> JunctionData {
        JunctionData {
            g: g.to_vec(),
            hams: g.iter().map(|_| JunctionHam { ham: HamiltonianSpec::abs(1.0), x: 0.0, orient: 1.0 }).collect(),
            b,
        }
    }

    #[test]
    fn single_edge_zero() {
        let d = abs_data(&[0.0], 0.0);
        let s = compute_fl_minus(&d).unwrap();
        assert!(s.fl_minus.abs() < 1e-12);
        assert!(s.p_tilde[0].abs() < 1e-12);
        let (v, _) = grid_search(&d, 5.0, 401).unwrap();
        assert!(v.abs() < 1e-3);
    }

    #[test]
    fn flat_two_edges() {
        let d = abs_data(&[0.0, 0.0], 1.0);
        let s = compute_fl_minus(&d).unwrap();
        assert!(s.fl_minus.abs() < 1e-12);
        assert!(s.flat);
        assert!(s.equalization_defect(&d).unwrap() < 1e-12);
        let (v, _) = grid_search(&d, 5.0, 401).unwrap();
        assert!(v.abs() < 1e-3);
    }

    #[test]
    fn head_orientation_flips_minimizer() {
        let h = JunctionHam { ham: HamiltonianSpec::shifted(1.0, 1.0), x: 0.0, orient: -1.0 };
        assert_eq!(h.p0().unwrap(), -1.0);
        assert_eq!(h.eval(-1.0), 0.0);
        assert_eq!(h.h_minus(-3.0).unwrap(), 0.0);
    }

    #[test]
    fn richardson_exact_for_cubics() {
        let h = 0.1;
        let vals: Vec<f64> = (0..6).map(|k| 3.0 * k as f64 * h).collect();
        assert!((richardson_slope(&vals, h).unwrap().0 - 3.0).abs() < 1e-12);
        let vals: Vec<f64> = (0..6).map(|k| (k as f64 * h).powi(2)).collect();
        assert!(richardson_slope(&vals, h).unwrap().0.abs() < 1e-12);
        assert!(richardson_slope(&vals[..4], h).is_err());
    }
}
