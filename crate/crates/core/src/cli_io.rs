//! Problem files, solve reports, CSV emission and the command
//! implementations behind the `khj` binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::flux_limiter::{fl_report, FLReport};
use crate::grid_core::{Discretization, GridFunction};
use crate::hamiltonians::HamiltonianSpec;
use crate::junction_solver::{
    continuation, lambda_star, solve_dirichlet, solve_kirchhoff, star_center, ContinuationStep, ContractionReport,
    DirichletOptions, KirchhoffState,
};
use crate::levy_kernels::{KernelForm, KernelSpec};
use crate::net_graph::{Edge, Network, Vertex};
use crate::network_solver::{solve_network, solve_viscous_network, MirandaCertificate, NetworkOptions, ViscousReport};
use crate::problem::{Coef, Problem, SolverConfig};
use crate::verify_harness::{barrier_check, barrier_constants, build_barriers, c0_for, convergence_table, manufactured_source, Barrier, Manufactured};
use crate::KhjError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPair {
    pub from: String,
    pub to: String,
    #[serde(flatten)]
    pub form: KernelForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub sigma: f64,
    #[serde(alias = "Lambda")]
    pub bound: f64,
    #[serde(default)]
    pub lipschitz_x: f64,
    /// Form used for every pair not listed in `pairs`.
    pub default: KernelForm,
    /// Exterior pairs default to zero instead of `default`.
    #[serde(default)]
    pub censored: bool,
    #[serde(default)]
    pub pairs: Vec<KernelPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSection {
    pub default: HamiltonianSpec,
    #[serde(default)]
    pub edges: BTreeMap<String, HamiltonianSpec>,
}

/// Per-edge coefficients with an optional default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CoefSection {
    #[serde(default)]
    pub default: Option<Coef>,
    #[serde(default)]
    pub edges: BTreeMap<String, Coef>,
}

/// Exact solution with its first two derivatives per edge; replaces the
/// sources by manufactured ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedSection {
    pub u: BTreeMap<String, Expr>,
    pub du: BTreeMap<String, Expr>,
    pub d2u: BTreeMap<String, Expr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub network: NetworkSection,
    pub kernels: KernelSection,
    pub hamiltonians: HamiltonianSection,
    #[serde(default)]
    pub sources: CoefSection,
    #[serde(default)]
    pub diffusion: CoefSection,
    /// `SolverConfig` fields plus an optional `n_cells` map by edge id.
    #[serde(default)]
    pub solver: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub manufactured: Option<ManufacturedSection>,
}

impl ProblemFile {
    pub fn from_json(s: &str) -> Result<Self, KhjError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KhjError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn config(&self) -> Result<(SolverConfig, BTreeMap<String, usize>), KhjError> {
        let mut m = self.solver.clone();
        let cells = match m.remove("n_cells") {
            Some(v) => serde_json::from_value(v)?,
            None => BTreeMap::new(),
        };
        Ok((serde_json::from_value(serde_json::Value::Object(m))?, cells))
    }

    /// Builds the in-memory problem. Manufactured sources are computed on
    /// the problem's own grid.
    pub fn to_problem(&self) -> Result<Problem, KhjError> {
        let net = Network::new(self.network.vertices.clone(), self.network.edges.clone())?;
        let ne = net.n_edges();
        let ks = &self.kernels;
        let mut k = if ks.censored {
            KernelSpec::censored(ne, ks.sigma, ks.bound, ks.default.clone())
        } else {
            KernelSpec::uniform(ne, ks.sigma, ks.bound, ks.default.clone())
        };
        k.lipschitz_x = ks.lipschitz_x;
        for p in &ks.pairs {
            k.set(net.edge_index(&p.from)?, net.edge_index(&p.to)?, p.form.clone());
        }
        let hs = &self.hamiltonians;
        for id in hs.edges.keys() {
            net.edge_index(id)?;
        }
        let hams =
            net.edges().iter().map(|e| hs.edges.get(&e.id).cloned().unwrap_or_else(|| hs.default.clone())).collect();
        let per_edge = |s: &CoefSection| -> Result<Vec<Coef>, KhjError> {
            for id in s.edges.keys() {
                net.edge_index(id)?;
            }
            Ok(net
                .edges()
                .iter()
                .map(|e| s.edges.get(&e.id).or(s.default.as_ref()).cloned().unwrap_or_else(|| Coef::constant(0.0)))
                .collect())
        };
        let sources = per_edge(&self.sources)?;
        let diffusion = per_edge(&self.diffusion)?;
        let (cfg, cells) = self.config()?;
        let mut p = Problem::new(net.clone(), k, hams).with_config(cfg);
        p.sources = sources;
        p.diffusion = diffusion;
        for (id, n) in cells {
            let e = net.edge_index(&id)?;
            p.n_cells[e] = n;
        }
        if self.manufactured.is_some() {
            p.ensure_valid()?;
            let disc = Discretization::new(&p)?;
            let (u, du, d2u) = self.exact_fns(&net)?;
            p.sources = manufactured_source(&disc, &Manufactured { u: &u, du: &du, d2u: &d2u });
        }
        Ok(p)
    }

    /// Exact solution closures `(u, u', u'')` indexed by canonical edge.
    #[allow(clippy::type_complexity)]
    pub fn exact_fns(
        &self,
        net: &Network,
    ) -> Result<
        (
            impl Fn(usize, f64) -> f64 + Sync,
            impl Fn(usize, f64) -> f64 + Sync,
            impl Fn(usize, f64) -> f64 + Sync,
        ),
        KhjError,
    > {
        let m = self.manufactured.as_ref().ok_or_else(|| KhjError::Lookup("no manufactured section".into()))?;
        let pick = |map: &BTreeMap<String, Expr>, what: &str| -> Result<Vec<Expr>, KhjError> {
            net.edges()
                .iter()
                .map(|e| map.get(&e.id).cloned().ok_or_else(|| KhjError::Lookup(format!("manufactured {what} missing for edge '{}'", e.id))))
                .collect()
        };
        let (u, du, d2u) = (pick(&m.u, "u")?, pick(&m.du, "du")?, pick(&m.d2u, "d2u")?);
        Ok((move |e: usize, x: f64| u[e].eval(x), move |e: usize, x: f64| du[e].eval(x), move |e: usize, x: f64| d2u[e].eval(x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Junction if there is one interior vertex, network if more, Dirichlet
    /// if none.
    Auto,
    Dirichlet,
    Junction,
    Network,
    Viscous,
}

impl std::str::FromStr for Mode {
    type Err = KhjError;
    fn from_str(s: &str) -> Result<Self, KhjError> {
        Ok(match s {
            "auto" => Mode::Auto,
            "dirichlet" => Mode::Dirichlet,
            "junction" => Mode::Junction,
            "network" => Mode::Network,
            "viscous" => Mode::Viscous,
            _ => return Err(KhjError::Lookup(format!("unknown mode '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub edge: String,
    pub arc: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub c0: f64,
    pub sup_norm: f64,
    pub c0_ok: bool,
    pub barrier: Option<Barrier>,
    pub barrier_violations: Option<usize>,
    pub exact_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: Mode,
    pub ok: bool,
    pub error: Option<String>,
    pub vertex_ids: Vec<String>,
    pub theta: Vec<f64>,
    pub residuals: Vec<f64>,
    pub kirchhoff: Option<KirchhoffState>,
    pub contraction: Option<ContractionReport>,
    pub continuation: Vec<ContinuationStep>,
    pub certificate: Option<MirandaCertificate>,
    pub viscous: Option<ViscousReport>,
    pub fl: Option<FLReport>,
    pub verification: Option<Verification>,
    pub config: SolverConfig,
    pub samples: Vec<Sample>,
    pub wall_time_s: f64,
}

impl SolveReport {
    fn empty(mode: Mode, config: SolverConfig) -> Self {
        Self {
            mode,
            ok: false,
            error: None,
            vertex_ids: Vec::new(),
            theta: Vec::new(),
            residuals: Vec::new(),
            kirchhoff: None,
            contraction: None,
            continuation: Vec::new(),
            certificate: None,
            viscous: None,
            fl: None,
            verification: None,
            config,
            samples: Vec::new(),
            wall_time_s: 0.0,
        }
    }
}

pub struct SolveOutcome {
    pub report: SolveReport,
    pub solution: Option<(Discretization, GridFunction)>,
}

pub fn resolve_mode(p: &Problem, mode: Mode) -> Mode {
    if mode != Mode::Auto {
        return mode;
    }
    match p.network.interior_vertices().len() {
        0 => Mode::Dirichlet,
        1 if p.network.incidence(p.network.interior_vertices()[0]).len() == p.network.n_edges() => Mode::Junction,
        _ => Mode::Network,
    }
}

pub fn samples(disc: &Discretization, u: &GridFunction) -> Vec<Sample> {
    u.samples(&disc.grid)
        .into_iter()
        .map(|(e, arc, value)| Sample { edge: disc.net.edges()[e].id.clone(), arc, value })
        .collect()
}

fn run_mode(p: &Problem, mode: Mode, rep: &mut SolveReport) -> Result<(Discretization, GridFunction), KhjError> {
    let cfg = &p.config;
    let ids = |d: &Discretization| d.net.interior_vertices().iter().map(|&v| d.net.vertices()[v].id.clone()).collect();
    match mode {
        Mode::Auto => unreachable!("mode resolved before dispatch"),
        Mode::Dirichlet => {
            let d = Discretization::new(p)?;
            if !d.net.interior_vertices().is_empty() {
                return Err(KhjError::Precondition("dirichlet mode needs a network without interior vertices".into()));
            }
            let (u, c) = solve_dirichlet(&d, &d.boundary_values(), None, &DirichletOptions::from_config(cfg))?;
            rep.contraction = Some(c);
            Ok((d, u))
        }
        Mode::Junction if !cfg.eps_schedule.is_empty() || !cfg.eta_schedule.is_empty() => {
            let r = continuation(p, &cfg.eps_schedule, &cfg.eta_schedule)?;
            let last = r.steps.last().expect("nonempty schedule");
            rep.theta = vec![last.theta];
            rep.residuals = vec![last.kirchhoff_residual];
            rep.vertex_ids = ids(&r.disc);
            rep.continuation = r.steps.clone();
            let u = r.solutions.last().cloned().expect("nonempty schedule");
            Ok((r.disc, u))
        }
        Mode::Junction => {
            let d = Discretization::new(p)?;
            star_center(&d)?;
            let s = solve_kirchhoff(&d, cfg.tol_k, None, &DirichletOptions::from_config(cfg))?;
            rep.theta = vec![s.theta];
            rep.residuals = vec![s.state.residual];
            rep.vertex_ids = ids(&d);
            rep.kirchhoff = Some(s.state);
            rep.contraction = Some(s.contraction);
            Ok((d, s.u))
        }
        Mode::Network => {
            let d = Discretization::new(p)?;
            let s = solve_network(&d, &NetworkOptions::from_config(cfg))?;
            rep.theta = s.theta.clone();
            rep.residuals = s.report.residuals.clone();
            rep.vertex_ids = ids(&d);
            rep.certificate = Some(s.report.certificate.clone());
            rep.contraction = Some(s.report.contraction.clone());
            Ok((d, s.u))
        }
        Mode::Viscous => {
            let d = Discretization::new(p)?;
            let (s, v) = solve_viscous_network(&d, &NetworkOptions::from_config(cfg))?;
            rep.theta = s.theta.clone();
            rep.residuals = s.report.residuals.clone();
            rep.vertex_ids = ids(&d);
            rep.certificate = Some(s.report.certificate.clone());
            rep.contraction = Some(s.report.contraction.clone());
            rep.viscous = Some(v);
            Ok((d, s.u))
        }
    }
}

fn verify(pf: Option<&ProblemFile>, d: &Discretization, u: &GridFunction, theta: &[f64]) -> Result<Verification, KhjError> {
    let t = theta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let c0 = c0_for(d, t);
    let sup = u.max_abs();
    let (mut barrier, mut viol) = (None, None);
    if theta.len() == 1 && star_center(d).is_ok() {
        let b = barrier_constants(d, theta[0], 0.5);
        let vals = crate::junction_solver::vertex_values(d, theta)?;
        let (lo, up) = build_barriers(d, &vals, &b);
        viol = Some(barrier_check(u, lo.as_ref(), &up, 1e-10).len());
        barrier = Some(b);
    }
    let exact_error = match pf.filter(|f| f.manufactured.is_some()) {
        Some(f) => {
            let (ue, _, _) = f.exact_fns(&d.net)?;
            Some(crate::verify_harness::max_error(u, &d.grid, ue))
        }
        None => None,
    };
    Ok(Verification { c0, sup_norm: sup, c0_ok: sup <= c0 + 1e-10, barrier, barrier_violations: viol, exact_error })
}

/// Solves a problem and assembles the report. Solver errors end up in the
/// report with `ok = false`.
pub fn solve_problem(p: &Problem, file: Option<&ProblemFile>, mode: Mode) -> SolveOutcome {
    let start = Instant::now();
    let mode = resolve_mode(p, mode);
    let mut rep = SolveReport::empty(mode, p.config.clone());
    let result = p.ensure_valid().and_then(|_| run_mode(p, mode, &mut rep)).and_then(|(d, u)| {
        rep.verification = Some(verify(file, &d, &u, &rep.theta)?);
        if matches!(mode, Mode::Junction) {
            rep.fl = fl_report(&u, &d, 10.0 * d.grid.max_h()).ok();
        }
        rep.samples = samples(&d, &u);
        Ok((d, u))
    });
    rep.wall_time_s = start.elapsed().as_secs_f64();
    match result {
        Ok(sol) => {
            rep.ok = true;
            SolveOutcome { report: rep, solution: Some(sol) }
        }
        Err(e) => {
            rep.error = Some(e.to_string());
            SolveOutcome { report: rep, solution: None }
        }
    }
}

pub fn write_solution_csv(path: impl AsRef<Path>, samples: &[Sample]) -> Result<(), KhjError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in samples {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_solution_csv(path: impl AsRef<Path>) -> Result<Vec<Sample>, KhjError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<Sample>, _>>().map_err(csv_err)
}

fn csv_err(e: csv::Error) -> KhjError {
    KhjError::Io(std::io::Error::other(e.to_string()))
}

/// Grid function from CSV samples; every node of the grid must be present
/// once per incident edge, at its arc coordinate.
pub fn grid_function_from_samples(disc: &Discretization, samples: &[Sample]) -> Result<GridFunction, KhjError> {
    let mut arrays: Vec<Vec<f64>> = disc.x.iter().map(|x| vec![f64::NAN; x.len()]).collect();
    for s in samples {
        let e = disc.net.edge_index(&s.edge).map_err(|_| KhjError::Alignment(format!("unknown edge '{}'", s.edge)))?;
        let g = &disc.grid.edges[e];
        let m = (s.arc / g.h).round();
        if !(0.0..=g.n_cells as f64).contains(&m) || (g.x(m as usize) - s.arc).abs() > 1e-9 * g.length.max(1.0) {
            return Err(KhjError::Alignment(format!("arc {} on edge '{}' is not a grid node", s.arc, s.edge)));
        }
        arrays[e][m as usize] = s.value;
    }
    if let Some((e, _)) = arrays.iter().enumerate().find(|(_, a)| a.iter().any(|v| v.is_nan())) {
        return Err(KhjError::Alignment(format!("edge '{}' has missing nodes", disc.net.edges()[e].id)));
    }
    GridFunction::from_edge_arrays(&disc.grid, &arrays, 1e-9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub ok: bool,
    pub messages: Vec<String>,
}

pub fn cmd_validate(path: impl AsRef<Path>) -> ValidationOutcome {
    let res = ProblemFile::load(path).and_then(|f| f.to_problem()).and_then(|p| p.ensure_valid());
    match res {
        Ok(()) => ValidationOutcome { ok: true, messages: Vec::new() },
        Err(KhjError::Validation(v)) => ValidationOutcome { ok: false, messages: v },
        Err(e) => ValidationOutcome { ok: false, messages: vec![e.to_string()] },
    }
}

pub fn cmd_solve(
    path: impl AsRef<Path>,
    mode: Mode,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> Result<SolveReport, KhjError> {
    let file = ProblemFile::load(path)?;
    let outcome = match file.to_problem() {
        Ok(p) => solve_problem(&p, Some(&file), mode),
        Err(e) => {
            let mut r = SolveReport::empty(mode, file.config().map(|c| c.0).unwrap_or_default());
            r.error = Some(e.to_string());
            SolveOutcome { report: r, solution: None }
        }
    };
    if let Some(o) = out {
        std::fs::write(o, serde_json::to_string_pretty(&outcome.report)?)?;
    }
    if let Some(c) = csv {
        write_solution_csv(c, &outcome.report.samples)?;
    }
    Ok(outcome.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    H,
    Eps,
    Eta,
    Sigma,
}

impl std::str::FromStr for SweepParam {
    type Err = KhjError;
    fn from_str(s: &str) -> Result<Self, KhjError> {
        Ok(match s {
            "h" => SweepParam::H,
            "eps" => SweepParam::Eps,
            "eta" => SweepParam::Eta,
            "sigma" => SweepParam::Sigma,
            _ => return Err(KhjError::Lookup(format!("unknown sweep parameter '{s}'"))),
        })
    }
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::H => "h",
            SweepParam::Eps => "eps",
            SweepParam::Eta => "eta",
            SweepParam::Sigma => "sigma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub metric: String,
    pub result: String,
}

/// Parses `1/50,0.01,...` using the expression grammar for each entry.
pub fn parse_values(s: &str) -> Result<Vec<f64>, KhjError> {
    let v = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| Expr::parse(t).map(|e| e.eval(0.0)).map_err(KhjError::from))
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err(KhjError::Precondition("empty values list".into()));
    }
    Ok(v)
}

pub fn cmd_sweep(path: impl AsRef<Path>, param: SweepParam, values: &[f64], mode: Mode) -> Result<Vec<SweepRow>, KhjError> {
    if values.is_empty() {
        return Err(KhjError::Precondition("empty values list".into()));
    }
    let file = ProblemFile::load(path)?;
    let pname = param.name();
    let row = |v: String, metric: &str, result: String| SweepRow { param: pname.into(), value: v, metric: metric.into(), result };
    let mut rows = Vec::new();
    if param == SweepParam::Eps {
        let p = file.to_problem()?;
        match continuation(&p, values, &[]) {
            Ok(r) => {
                for s in &r.steps {
                    let v = s.epsilon.to_string();
                    rows.push(row(v.clone(), "theta", s.theta.to_string()));
                    rows.push(row(v.clone(), "kirchhoff_residual", s.kirchhoff_residual.to_string()));
                    rows.push(row(v.clone(), "lipschitz", s.lipschitz.to_string()));
                    if let Some(dp) = s.diff_prev {
                        rows.push(row(v, "diff_prev", dp.to_string()));
                    }
                }
                rows.push(row(String::new(), "alarm", r.alarm.to_string()));
            }
            Err(e) => rows.push(row(String::new(), "error", e.to_string())),
        }
        return Ok(rows);
    }
    let mut errors = Vec::new();
    for &v in values {
        let vs = v.to_string();
        let mut f = file.clone();
        match param {
            SweepParam::H => {
                f.solver.insert("h".into(), v.into());
                f.solver.remove("n_cells");
            }
            SweepParam::Eta => {
                f.solver.insert("eta".into(), v.into());
            }
            SweepParam::Sigma => f.kernels.sigma = v,
            SweepParam::Eps => unreachable!(),
        }
        let p = match f.to_problem() {
            Ok(p) => p,
            Err(e) => {
                rows.push(row(vs, "error", e.to_string()));
                continue;
            }
        };
        if let Ok(d) = Discretization::new(&p) {
            rows.push(row(vs.clone(), "lambda_star", lambda_star(&d).to_string()));
        }
        let out = solve_problem(&p, Some(&f), mode);
        match out.report.error {
            Some(e) => rows.push(row(vs, "error", e)),
            None => {
                for (id, t) in out.report.vertex_ids.iter().zip(&out.report.theta) {
                    rows.push(row(vs.clone(), &format!("theta:{id}"), t.to_string()));
                }
                let r = out.report.residuals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                rows.push(row(vs.clone(), "kirchhoff_residual", r.to_string()));
                if let Some(err) = out.report.verification.as_ref().and_then(|v| v.exact_error) {
                    rows.push(row(vs, "max_error", err.to_string()));
                    errors.push((p.max_h(), err));
                }
            }
        }
    }
    if param == SweepParam::H && errors.len() >= 3 {
        let (h, e): (Vec<f64>, Vec<f64>) = errors.into_iter().unzip();
        let t = convergence_table(&h, &e)?;
        rows.push(row(String::new(), "order", t.order.map_or("exact".into(), |o| o.to_string())));
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<(), KhjError> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_flcheck(path: impl AsRef<Path>, solution: impl AsRef<Path>) -> Result<FLReport, KhjError> {
    let p = ProblemFile::load(path)?.to_problem()?;
    p.ensure_valid()?;
    let d = Discretization::new(&p)?;
    let u = grid_function_from_samples(&d, &read_solution_csv(solution)?)?;
    fl_report(&u, &d, 10.0 * d.grid.max_h())
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAR: &str = r#"{
        "network": {
            "vertices": [
                {"id": "O", "kind": "interior", "B": 0.0},
                {"id": "a", "kind": "boundary", "h": 0.2},
                {"id": "b", "kind": "boundary", "h": 0.2}
            ],
            "edges": [
                {"id": "E1", "tail": "O", "head": "a", "length": 1.0},
                {"id": "E2", "tail": "O", "head": "b", "length": 1.0}
            ]
        },
        "kernels": {"sigma": 0.5, "bound": 1.0, "default": {"family": "model", "c": 1.0}},
        "hamiltonians": {"default": {"family": "abs", "c_h": 1.0}},
        "sources": {"default": 0.2},
        "solver": {"h": 0.05, "epsilon": 0.1, "n_cells": {"E2": 25}}
    }"#;

    #[test]
    fn parses_and_builds() {
        let f = ProblemFile::from_json(STAR).unwrap();
        let p = f.to_problem().unwrap();
        assert_eq!(p.n_cells, vec![20, 25]);
        assert_eq!(p.config.epsilon, 0.1);
        assert!(p.check().is_empty());
    }

    #[test]
    fn unknown_solver_field_rejected() {
        let s = STAR.replace("\"epsilon\": 0.1", "\"epsilonn\": 0.1");
        assert!(ProblemFile::from_json(&s).unwrap().to_problem().is_err());
    }

    #[test]
    fn constant_star_solves_exactly() {
        let p = ProblemFile::from_json(STAR).unwrap().to_problem().unwrap();
        let out = solve_problem(&p, None, Mode::Auto);
        assert!(out.report.ok, "{:?}", out.report.error);
        assert_eq!(out.report.mode, Mode::Junction);
        assert!((out.report.theta[0] - 0.2).abs() < 1e-9);
        let v = out.report.verification.unwrap();
        assert!(v.c0_ok);
        assert_eq!(v.barrier_violations, Some(0));
    }

    #[test]
    fn values_parsing() {
        assert_eq!(parse_values("1/50, 1/100").unwrap(), vec![0.02, 0.01]);
        assert!(parse_values("").is_err());
    }
}
