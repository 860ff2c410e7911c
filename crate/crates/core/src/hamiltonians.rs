//! Per-edge Hamiltonians `H(x, p)`: globally Lipschitz in `p`, coercive,
//! convex with a unique minimizer, plus the monotone split `H^-`, `H^+` and
//! the Lax–Friedrichs numerical flux.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::KhjError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HamFamily {
    /// `|p|`
    Abs,
    /// `|p - b(x)|`
    Shifted { b: Expr },
    /// `|p| + c(x)`
    AbsPlus { c: Expr },
    /// `right * max(p - kink, 0) + left * max(kink - p, 0) + offset(x)`
    PiecewiseLinear { right: f64, left: f64, kink: f64, offset: Expr },
    /// x-independent samples, piecewise linear in `p`, linear beyond the ends.
    Tabulated { p: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    #[serde(flatten)]
    pub family: HamFamily,
    pub c_h: f64,
}

impl HamiltonianSpec {
    pub fn new(family: HamFamily, c_h: f64) -> Self {
        Self { family, c_h }
    }

    pub fn abs(c_h: f64) -> Self {
        Self::new(HamFamily::Abs, c_h)
    }

    pub fn shifted(b: f64, c_h: f64) -> Self {
        Self::new(HamFamily::Shifted { b: Expr::constant(b) }, c_h)
    }

    pub fn eval(&self, x: f64, p: f64) -> f64 {
        match &self.family {
            HamFamily::Abs => p.abs(),
            HamFamily::Shifted { b } => (p - b.eval(x)).abs(),
            HamFamily::AbsPlus { c } => p.abs() + c.eval(x),
            HamFamily::PiecewiseLinear { right, left, kink, offset } => {
                right * (p - kink).max(0.0) + left * (kink - p).max(0.0) + offset.eval(x)
            }
            HamFamily::Tabulated { p: ps, values } => {
                let n = ps.len();
                let k = if p <= ps[0] {
                    0
                } else if p >= ps[n - 1] {
                    n - 2
                } else {
                    ps.partition_point(|&v| v <= p) - 1
                };
                let s = (values[k + 1] - values[k]) / (ps[k + 1] - ps[k]);
                values[k] + s * (p - ps[k])
            }
        }
    }

    /// A selection of the p-subdifferential, used as Jacobian entry.
    pub fn dp(&self, x: f64, p: f64) -> f64 {
        let sgn = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        match &self.family {
            HamFamily::Abs | HamFamily::AbsPlus { .. } => sgn(p),
            HamFamily::Shifted { b } => sgn(p - b.eval(x)),
            HamFamily::PiecewiseLinear { right, left, kink, .. } => {
                if p > *kink {
                    *right
                } else if p < *kink {
                    -*left
                } else {
                    0.0
                }
            }
            HamFamily::Tabulated { p: ps, values } => {
                let n = ps.len();
                let k = if p <= ps[0] {
                    0
                } else if p >= ps[n - 1] {
                    n - 2
                } else {
                    ps.partition_point(|&v| v <= p) - 1
                };
                (values[k + 1] - values[k]) / (ps[k + 1] - ps[k])
            }
        }
    }

    /// Lipschitz constant of `H(x, .)`.
    pub fn lip_p(&self) -> f64 {
        match &self.family {
            HamFamily::Abs | HamFamily::Shifted { .. } | HamFamily::AbsPlus { .. } => 1.0,
            HamFamily::PiecewiseLinear { right, left, .. } => right.abs().max(left.abs()),
            HamFamily::Tabulated { p, values } => p
                .windows(2)
                .zip(values.windows(2))
                .map(|(a, b)| ((b[1] - b[0]) / (a[1] - a[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn is_convex(&self) -> bool {
        match &self.family {
            HamFamily::PiecewiseLinear { right, left, .. } => *right > 0.0 && *left > 0.0,
            HamFamily::Tabulated { p, values } => {
                let slopes: Vec<f64> = p.windows(2).zip(values.windows(2)).map(|(a, b)| (b[1] - b[0]) / (a[1] - a[0])).collect();
                slopes.windows(2).all(|s| s[1] >= s[0] - 1e-14) && slopes[0] < 0.0 && slopes[slopes.len() - 1] > 0.0
            }
            _ => true,
        }
    }

    /// Minimizer `p0(x)` of the convex map `p -> H(x, p)`.
    pub fn p0(&self, x: f64) -> Result<f64, KhjError> {
        if !self.is_convex() {
            return Err(KhjError::Unsupported("minimizer requested for a non-convex Hamiltonian".into()));
        }
        Ok(match &self.family {
            HamFamily::Abs | HamFamily::AbsPlus { .. } => 0.0,
            HamFamily::Shifted { b } => b.eval(x),
            HamFamily::PiecewiseLinear { kink, .. } => *kink,
            HamFamily::Tabulated { .. } => {
                let r = 2.0 * self.c_h * self.c_h;
                golden_section(|p| self.eval(x, p), -r, r, 1e-12)
            }
        })
    }

    /// `H^-(x, p)`: frozen at `H(x, p0)` for `p <= p0`.
    pub fn h_minus(&self, x: f64, p: f64) -> Result<f64, KhjError> {
        let p0 = self.p0(x)?;
        Ok(self.eval(x, p.max(p0)))
    }

    /// `H^+(x, p)`: frozen at `H(x, p0)` for `p >= p0`.
    pub fn h_plus(&self, x: f64, p: f64) -> Result<f64, KhjError> {
        let p0 = self.p0(x)?;
        Ok(self.eval(x, p.min(p0)))
    }

    /// Local Lax–Friedrichs flux with viscosity coefficient `C_H`.
    pub fn lf_flux(&self, x: f64, p_minus: f64, p_plus: f64) -> f64 {
        self.lf_flux_with(x, p_minus, p_plus, self.c_h)
    }

    pub fn lf_flux_with(&self, x: f64, p_minus: f64, p_plus: f64, c: f64) -> f64 {
        self.eval(x, 0.5 * (p_minus + p_plus)) - 0.5 * c * (p_plus - p_minus)
    }

    /// Samples the growth, p-Lipschitz and x-Lipschitz conditions on
    /// `x in [0, a]`, `|p| <= pmax`.
    pub fn check_assumptions(&self, a: f64, samples: usize, seed: u64) -> Vec<String> {
        let mut out = Vec::new();
        let ch = self.c_h;
        if !(ch >= 1.0) {
            out.push(format!("C_H = {ch} must be at least 1"));
            return out;
        }
        if let HamFamily::Tabulated { p, values } = &self.family {
            if p.len() < 2 || p.len() != values.len() || p.windows(2).any(|w| !(w[1] > w[0])) {
                out.push("tabulated Hamiltonian needs >= 2 increasing p samples matching values".into());
                return out;
            }
        }
        if self.lip_p() > ch {
            out.push(format!("p-Lipschitz constant {} exceeds C_H = {ch}", self.lip_p()));
        }
        let mut rng = StdRng::seed_from_u64(seed);
        let pmax = 10.0 * ch * ch;
        let (mut growth, mut lipp, mut lipx) = (0, 0, 0);
        for _ in 0..samples {
            let x: f64 = rng.random_range(0.0..=a);
            let y: f64 = rng.random_range(0.0..=a);
            let p: f64 = rng.random_range(-pmax..pmax);
            let q: f64 = rng.random_range(-pmax..pmax);
            let hp = self.eval(x, p);
            let slack = 1e-12 * (1.0 + hp.abs());
            if hp < p.abs() / ch - ch - slack || hp > ch * (1.0 + p.abs()) + slack {
                growth += 1;
            }
            if (hp - self.eval(x, q)).abs() > ch * (p - q).abs() + slack {
                lipp += 1;
            }
            if (hp - self.eval(y, p)).abs() > ch * (1.0 + p.abs()) * (x - y).abs() + slack {
                lipx += 1;
            }
        }
        if growth > 0 {
            out.push(format!("growth bounds violated at {growth} samples"));
        }
        if lipp > 0 {
            out.push(format!("p-Lipschitz bound violated at {lipp} samples"));
        }
        if lipx > 0 {
            out.push(format!("x-Lipschitz bound violated at {lipx} samples"));
        }
        if !self.is_convex() {
            out.push("Hamiltonian is not convex with a unique minimizer".into());
        }
        out
    }
}

/// Minimizer of a convex function on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        assert_eq!(HamiltonianSpec::abs(1.0).eval(0.0, -2.0), 2.0);
        assert_eq!(HamiltonianSpec::shifted(1.0, 2.0).eval(0.0, 1.0), 0.0);
        let h = HamiltonianSpec::new(HamFamily::AbsPlus { c: Expr::parse("0.5*sin(x)").unwrap() }, 2.0);
        assert!((h.eval(std::f64::consts::FRAC_PI_2, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn split_examples() {
        let h = HamiltonianSpec::abs(1.0);
        for p in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert_eq!(h.h_minus(0.0, p).unwrap(), f64::max(p, 0.0));
            assert_eq!(h.h_plus(0.0, p).unwrap(), f64::max(-p, 0.0));
        }
        let h = HamiltonianSpec::shifted(1.0, 2.0);
        assert_eq!(h.p0(0.0).unwrap(), 1.0);
        for p in [-2.0, 0.5, 1.0, 3.0] {
            assert_eq!(h.h_minus(0.0, p).unwrap(), f64::max(p - 1.0, 0.0));
            assert_eq!(h.h_plus(0.0, p).unwrap(), f64::max(1.0 - p, 0.0));
        }
    }

    #[test]
    fn tabulated_minimizer_by_golden_section() {
        let h = HamiltonianSpec::new(HamFamily::Tabulated { p: vec![-2.0, 0.3, 2.0], values: vec![2.0, -0.3, 1.4] }, 2.0);
        assert!((h.p0(0.0).unwrap() - 0.3).abs() < 1e-9);
        assert!(h.check_assumptions(1.0, 2000, 1).is_empty());
        let nc = HamiltonianSpec::new(HamFamily::Tabulated { p: vec![-1.0, 0.0, 1.0], values: vec![0.0, 1.0, 0.0] }, 2.0);
        assert!(nc.p0(0.0).is_err());
    }

    #[test]
    fn lf_flux_examples() {
        let h = HamiltonianSpec::abs(1.0);
        assert_eq!(h.lf_flux(0.0, 1.0, 1.0), 1.0);
        assert_eq!(h.lf_flux(0.0, 1.0, -1.0), 1.0);
    }

    #[test]
    fn builtins_satisfy_assumptions() {
        let fams = [
            HamiltonianSpec::abs(1.0),
            HamiltonianSpec::shifted(1.0, 2.0),
            HamiltonianSpec::new(HamFamily::AbsPlus { c: Expr::parse("0.5*sin(x)").unwrap() }, 2.0),
            HamiltonianSpec::new(
                HamFamily::PiecewiseLinear { right: 2.0, left: 0.5, kink: 0.2, offset: Expr::parse("0.3*cos(x)").unwrap() },
                2.0,
            ),
        ];
        for h in fams {
            assert!(h.check_assumptions(1.0, 10_000, 7).is_empty(), "{h:?}");
        }
        assert!(!HamiltonianSpec::abs(0.5).check_assumptions(1.0, 10, 0).is_empty());
    }
}
