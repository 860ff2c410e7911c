//! Lévy kernels `nu_EF(x, r)` of order sigma, their truncation at level
//! `1/eta`, integrability and tail masses.
//!
//! All radial integrals are exact: model kernels `c(x) r^(-1-sigma)` are
//! integrated piecewise analytically around the cap crossover, tabulated
//! kernels are piecewise linear in `r` with power-law extrapolation below the
//! first and above the last sample.

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::KhjError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelForm {
    /// `c(x) * r^(-1-sigma)`
    Model { c: Expr },
    /// x-independent samples `nu(r_k)`, increasing `r_k > 0`.
    Tabulated { r: Vec<f64>, nu: Vec<f64> },
    Zero,
}

impl KernelForm {
    pub fn model(c: f64) -> Self {
        KernelForm::Model { c: Expr::constant(c) }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            KernelForm::Zero => true,
            KernelForm::Model { c } => c.is_constant() && c.eval(0.0) == 0.0,
            KernelForm::Tabulated { nu, .. } => nu.iter().all(|&v| v == 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevyIntegral {
    Finite(f64),
    Divergent,
}

impl LevyIntegral {
    pub fn value(self) -> Option<f64> {
        match self {
            LevyIntegral::Finite(v) => Some(v),
            LevyIntegral::Divergent => None,
        }
    }
}

/// The kernel family over all ordered edge pairs of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub sigma: f64,
    /// The constant Lambda of the order bound `nu <= Lambda r^(-1-sigma)`.
    pub bound: f64,
    pub lipschitz_x: f64,
    pub eta: Option<f64>,
    n_edges: usize,
    forms: Vec<KernelForm>,
}

/// `∫_a^b r^p dr`, possibly infinite.
fn power_integral(p: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if (p + 1.0).abs() < 1e-300 {
        return (b / a).ln();
    }
    let e = p + 1.0;
    let fb = if b.is_infinite() {
        if e < 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        b.powf(e)
    };
    let fa = if a == 0.0 {
        if e > 0.0 {
            0.0
        } else {
            return f64::INFINITY;
        }
    } else {
        a.powf(e)
    };
    (fb - fa) / e
}

/// `∫_a^b r^q min(cap, c r^(-1-sigma)) dr` for a pure power law.
fn capped_power_moment(c: f64, sigma: f64, cap: Option<f64>, q: f64, a: f64, b: f64) -> f64 {
    if c <= 0.0 || b <= a {
        return 0.0;
    }
    match cap {
        None => c * power_integral(q - 1.0 - sigma, a, b),
        Some(cap) => {
            let rc = (c / cap).powf(1.0 / (1.0 + sigma));
            let mid = rc.clamp(a, b);
            cap * power_integral(q, a, mid) + c * power_integral(q - 1.0 - sigma, mid, b)
        }
    }
}

/// `∫_a^b r^q min(cap, alpha + beta r) dr` for a linear piece on `[a, b]`.
fn capped_linear_moment(alpha: f64, beta: f64, cap: Option<f64>, q: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let lin = |lo: f64, hi: f64| alpha * power_integral(q, lo, hi) + beta * power_integral(q + 1.0, lo, hi);
    let Some(cap) = cap else { return lin(a, b) };
    let va = alpha + beta * a;
    let vb = alpha + beta * b;
    if va <= cap && vb <= cap {
        return lin(a, b);
    }
    if va >= cap && vb >= cap {
        return cap * power_integral(q, a, b);
    }
    let rc = ((cap - alpha) / beta).clamp(a, b);
    if va > cap {
        cap * power_integral(q, a, rc) + lin(rc, b)
    } else {
        lin(a, rc) + cap * power_integral(q, rc, b)
    }
}

impl KernelSpec {
    /// All pairs share the same form.
    pub fn uniform(n_edges: usize, sigma: f64, bound: f64, form: KernelForm) -> Self {
        Self { sigma, bound, lipschitz_x: 0.0, eta: None, n_edges, forms: vec![form; n_edges * n_edges] }
    }

    /// Every pair with `F = E` gets `form`, every exterior pair is zero.
    pub fn censored(n_edges: usize, sigma: f64, bound: f64, form: KernelForm) -> Self {
        let mut k = Self::uniform(n_edges, sigma, bound, KernelForm::Zero);
        for e in 0..n_edges {
            k.set(e, e, form.clone());
        }
        k
    }

    pub fn with_eta(mut self, eta: Option<f64>) -> Self {
        self.eta = eta;
        self
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn set(&mut self, e: usize, f: usize, form: KernelForm) {
        self.forms[e * self.n_edges + f] = form;
    }

    pub fn form(&self, e: usize, f: usize) -> &KernelForm {
        &self.forms[e * self.n_edges + f]
    }

    pub fn is_zero(&self, e: usize, f: usize) -> bool {
        self.form(e, f).is_zero()
    }

    /// True when no exterior pair `(e, F)`, `F != e`, carries mass.
    pub fn is_censored_row(&self, e: usize) -> bool {
        (0..self.n_edges).all(|f| f == e || self.is_zero(e, f))
    }

    pub fn cap(&self) -> Option<f64> {
        self.eta.map(|eta| 1.0 / eta)
    }

    /// Untruncated value.
    pub fn raw(&self, e: usize, f: usize, x: f64, r: f64) -> f64 {
        let s = self.sigma;
        match self.form(e, f) {
            KernelForm::Zero => 0.0,
            KernelForm::Model { c } => c.eval(x) * r.powf(-1.0 - s),
            KernelForm::Tabulated { r: rs, nu } => {
                let n = rs.len();
                if r <= rs[0] {
                    nu[0] * (r / rs[0]).powf(-1.0 - s)
                } else if r >= rs[n - 1] {
                    nu[n - 1] * (r / rs[n - 1]).powf(-1.0 - s)
                } else {
                    let k = rs.partition_point(|&v| v <= r) - 1;
                    let t = (r - rs[k]) / (rs[k + 1] - rs[k]);
                    nu[k] + t * (nu[k + 1] - nu[k])
                }
            }
        }
    }

    /// Kernel value, capped at `1/eta` when truncation is set.
    pub fn evaluate(&self, e: usize, f: usize, x: f64, r: f64) -> Result<f64, KhjError> {
        if !(r > 0.0) {
            return Err(KhjError::Domain(format!("kernel radius must be positive, got {r}")));
        }
        let v = self.raw(e, f, x, r);
        Ok(match self.cap() {
            Some(c) => v.min(c),
            None => v,
        })
    }

    /// `∫_a^b r^q nu^eta(x, r) dr` with `0 <= a < b <= inf`.
    pub fn power_moment(&self, e: usize, f: usize, x: f64, q: f64, a: f64, b: f64) -> f64 {
        let s = self.sigma;
        let cap = self.cap();
        match self.form(e, f) {
            KernelForm::Zero => 0.0,
            KernelForm::Model { c } => capped_power_moment(c.eval(x), s, cap, q, a, b),
            KernelForm::Tabulated { r: rs, nu } => {
                let n = rs.len();
                let mut sum = 0.0;
                let lo_c = nu[0] * rs[0].powf(1.0 + s);
                sum += capped_power_moment(lo_c, s, cap, q, a, b.min(rs[0]));
                for k in 0..n - 1 {
                    let (lo, hi) = (a.max(rs[k]), b.min(rs[k + 1]));
                    if hi > lo {
                        let beta = (nu[k + 1] - nu[k]) / (rs[k + 1] - rs[k]);
                        let alpha = nu[k] - beta * rs[k];
                        sum += capped_linear_moment(alpha, beta, cap, q, lo, hi);
                    }
                }
                let hi_c = nu[n - 1] * rs[n - 1].powf(1.0 + s);
                sum += capped_power_moment(hi_c, s, cap, q, a.max(rs[n - 1]), b);
                sum
            }
        }
    }

    /// Zeroth and first radial moments over `[a, b]`.
    pub fn moments(&self, e: usize, f: usize, x: f64, a: f64, b: f64) -> (f64, f64) {
        (self.power_moment(e, f, x, 0.0, a, b), self.power_moment(e, f, x, 1.0, a, b))
    }

    /// `∫_0^∞ min(r^gamma, 1) nu(x, r) dr`.
    pub fn levy_integral(&self, e: usize, f: usize, x: f64, gamma: f64) -> Result<LevyIntegral, KhjError> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(KhjError::Domain(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if self.is_zero(e, f) {
            return Ok(LevyIntegral::Finite(0.0));
        }
        if self.eta.is_none() && gamma <= self.sigma {
            return Ok(LevyIntegral::Divergent);
        }
        let v = self.power_moment(e, f, x, gamma, 0.0, 1.0) + self.power_moment(e, f, x, 0.0, 1.0, f64::INFINITY);
        Ok(if v.is_finite() { LevyIntegral::Finite(v) } else { LevyIntegral::Divergent })
    }

    /// Mass of the truncated kernel over a target interval at distances
    /// `offset + z`, `z` in `[0, len]`.
    pub fn tail_mass(&self, e: usize, f: usize, x: f64, offset: f64, len: f64) -> Result<f64, KhjError> {
        if self.eta.is_none() {
            return Err(KhjError::Precondition("tail mass needs a truncation level eta".into()));
        }
        Ok(self.power_moment(e, f, x, 0.0, offset, offset + len))
    }

    /// Samples the order bound, positivity and x-Lipschitz conditions.
    /// `lengths[e]` is the arc range on which `x` is sampled for row `e`.
    pub fn check_assumptions(&self, lengths: &[f64], per_decade: usize) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            out.push(format!("kernel order sigma = {} must lie in (0, 1)", self.sigma));
            return out;
        }
        if !(self.bound > 0.0) {
            out.push(format!("kernel bound Lambda = {} must be positive", self.bound));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                out.push(format!("truncation eta = {eta} must lie in (0, 1]"));
            }
        }
        let decades = 8usize;
        let rs: Vec<f64> = (0..=decades * per_decade).map(|k| 10f64.powf(-4.0 + k as f64 / per_decade as f64)).collect();
        for e in 0..self.n_edges {
            let a = lengths.get(e).copied().unwrap_or(1.0);
            let xs: Vec<f64> = (0..=8).map(|k| a * k as f64 / 8.0).collect();
            for f in 0..self.n_edges {
                if self.is_zero(e, f) {
                    continue;
                }
                if let KernelForm::Tabulated { r, nu } = self.form(e, f) {
                    if r.len() < 2 || r.len() != nu.len() || r.windows(2).any(|w| !(w[1] > w[0])) || r[0] <= 0.0 {
                        out.push(format!("kernel ({e},{f}): table needs >= 2 increasing positive radii matching values"));
                        continue;
                    }
                }
                let mut bad = 0usize;
                for &x in &xs {
                    for &r in &rs {
                        let env = self.bound * r.powf(-1.0 - self.sigma);
                        let v = self.raw(e, f, x, r);
                        if !(v >= 0.0) || v > env * (1.0 + 1e-12) {
                            bad += 1;
                        }
                    }
                }
                if bad > 0 {
                    out.push(format!("kernel ({e},{f}): order bound violated at {bad} sampled (x, r)"));
                }
                let mut lip_bad = 0usize;
                for w in xs.windows(2) {
                    for &r in rs.iter().step_by(per_decade.max(1) / 4 + 1) {
                        let d = (self.raw(e, f, w[0], r) - self.raw(e, f, w[1], r)).abs();
                        if d > self.lipschitz_x.max(self.bound) * (w[1] - w[0]) * r.powf(-1.0 - self.sigma) * (1.0 + 1e-9) {
                            lip_bad += 1;
                        }
                    }
                }
                if lip_bad > 0 {
                    out.push(format!("kernel ({e},{f}): x-Lipschitz bound violated at {lip_bad} samples"));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature;

    fn model(c: f64, eta: Option<f64>) -> KernelSpec {
        KernelSpec::uniform(1, 0.5, 1.0, KernelForm::model(c)).with_eta(eta)
    }

    #[test]
    fn evaluate_examples() {
        assert!((model(1.0, None).evaluate(0, 0, 0.0, 0.25).unwrap() - 8.0).abs() < 1e-14);
        assert_eq!(model(1.0, Some(0.25)).evaluate(0, 0, 0.0, 0.1).unwrap(), 4.0);
        let z = KernelSpec::uniform(1, 0.5, 1.0, KernelForm::Zero);
        assert_eq!(z.evaluate(0, 0, 0.3, 0.01).unwrap(), 0.0);
        assert!(model(1.0, None).evaluate(0, 0, 0.0, 0.0).is_err());
    }

    #[test]
    fn levy_integral_closed_forms() {
        let k = model(1.0, None);
        assert!((k.levy_integral(0, 0, 0.0, 1.0).unwrap().value().unwrap() - 4.0).abs() < 1e-12);
        assert!((k.levy_integral(0, 0, 0.0, 0.75).unwrap().value().unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(k.levy_integral(0, 0, 0.0, 0.5).unwrap(), LevyIntegral::Divergent);
        assert_eq!(k.levy_integral(0, 0, 0.0, 0.3).unwrap(), LevyIntegral::Divergent);
    }

    #[test]
    fn tail_mass_examples() {
        let k = model(100.0, Some(0.25));
        // kernel 100 r^-1.5 >= 100 > 4 on (0, 1]
        assert!((k.tail_mass(0, 0, 0.0, 0.0, 1.0).unwrap() - 4.0).abs() < 1e-14);
        let k = model(1.0, Some(0.25));
        let rc = 4f64.powf(-2.0 / 3.0);
        let oracle = quadrature::integrate_split(|r: f64| (r.powf(-1.5)).min(4.0), 0.0, 1.0, &[rc], 1e-13);
        let got = k.tail_mass(0, 0, 0.0, 0.0, 1.0).unwrap();
        assert!((got - oracle).abs() < 1e-10);
        assert!((got - 2.762).abs() < 1e-3);
        assert!(model(1.0, None).tail_mass(0, 0, 0.0, 0.0, 1.0).is_err());
        let z = KernelSpec::uniform(1, 0.5, 1.0, KernelForm::Zero).with_eta(Some(0.1));
        assert_eq!(z.tail_mass(0, 0, 0.0, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn tabulated_moments_match_quadrature() {
        let rs: Vec<f64> = (0..=40).map(|k| 10f64.powf(-2.0 + k as f64 / 20.0)).collect();
        let nu: Vec<f64> = rs.iter().map(|r| 0.7 * r.powf(-1.5) * (1.0 + 0.2 * (r * 3.0).sin())).collect();
        let k = KernelSpec::uniform(1, 0.5, 1.0, KernelForm::Tabulated { r: rs.clone(), nu }).with_eta(Some(0.05));
        let f = |r: f64| k.evaluate(0, 0, 0.0, r).unwrap();
        let mut br = rs.clone();
        // cap crossover(s) are kinks; refine near them through breaks at samples
        br.extend((1..400).map(|i| i as f64 * 0.0025));
        for (a, b) in [(0.0, 0.5), (0.003, 2.0), (0.2, 50.0)] {
            let (m0, m1) = k.moments(0, 0, 0.0, a, b);
            let q0 = quadrature::integrate_split(f, a, b, &br, 1e-12);
            let q1 = quadrature::integrate_split(|r| r * f(r), a, b, &br, 1e-12);
            assert!((m0 - q0).abs() < 1e-7 * (1.0 + q0), "{a} {b}: {m0} vs {q0}");
            assert!((m1 - q1).abs() < 1e-7 * (1.0 + q1));
        }
    }

    #[test]
    fn assumption_sampler_flags_bad_sigma_and_bound() {
        let k = KernelSpec::uniform(1, 1.2, 1.0, KernelForm::model(1.0));
        assert!(!k.check_assumptions(&[1.0], 16).is_empty());
        let k = KernelSpec::uniform(1, 0.5, 1.0, KernelForm::model(2.0));
        assert!(!k.check_assumptions(&[1.0], 16).is_empty());
        let k = KernelSpec::uniform(1, 0.5, 1.0, KernelForm::model(1.0));
        assert!(k.check_assumptions(&[1.0], 16).is_empty());
    }
}
