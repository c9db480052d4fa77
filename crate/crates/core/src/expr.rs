//! Symbolic scalar expressions (for the outer map of cylinder observables) and
//! compactly supported one-particle profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Exp(Box<Expr>),
    Tanh(Box<Expr>),
}

pub fn constant(c: f64) -> Expr {
    Expr::Const(c)
}

pub fn var(i: usize) -> Expr {
    Expr::Var(i)
}

impl Expr {
    pub fn add(self, other: Expr) -> Expr {
        match (self, other) {
            (Expr::Const(a), Expr::Const(b)) => Expr::Const(a + b),
            (Expr::Const(z), e) | (e, Expr::Const(z)) if z == 0.0 => e,
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(self, other: Expr) -> Expr {
        match (self, other) {
            (Expr::Const(a), Expr::Const(b)) => Expr::Const(a * b),
            (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
            (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn powf(self, p: f64) -> Expr {
        match self {
            _ if p == 0.0 => Expr::Const(1.0),
            e if p == 1.0 => e,
            Expr::Const(a) => Expr::Const(a.powf(p)),
            e => Expr::Pow(Box::new(e), p),
        }
    }

    pub fn exp(self) -> Expr {
        match self {
            Expr::Const(a) => Expr::Const(a.exp()),
            e => Expr::Exp(Box::new(e)),
        }
    }

    pub fn tanh(self) -> Expr {
        match self {
            Expr::Const(a) => Expr::Const(a.tanh()),
            e => Expr::Tanh(Box::new(e)),
        }
    }

    /// Number of variables referenced (`1 + max index`).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Add(a, b) | Expr::Mul(a, b) => a.arity().max(b.arity()),
            Expr::Pow(a, _) | Expr::Exp(a) | Expr::Tanh(a) => a.arity(),
        }
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => v[*i],
            Expr::Add(a, b) => a.eval(v) + b.eval(v),
            Expr::Mul(a, b) => a.eval(v) * b.eval(v),
            Expr::Pow(a, p) => pow(a.eval(v), *p),
            Expr::Exp(a) => a.eval(v).exp(),
            Expr::Tanh(a) => a.eval(v).tanh(),
        }
    }

    /// Symbolic `∂/∂v_i`.
    pub fn partial(&self, i: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(j) => Expr::Const(if *j == i { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => a.partial(i).add(b.partial(i)),
            Expr::Mul(a, b) => a.partial(i).mul((**b).clone()).add((**a).clone().mul(b.partial(i))),
            Expr::Pow(a, p) => Expr::Const(*p).mul((**a).clone().powf(p - 1.0)).mul(a.partial(i)),
            Expr::Exp(a) => self.clone().mul(a.partial(i)),
            Expr::Tanh(a) => Expr::Const(1.0)
                .add(Expr::Const(-1.0).mul(self.clone().powf(2.0)))
                .mul(a.partial(i)),
        }
    }

    /// Enclosure of the range over a box of variable intervals.
    pub fn bounds(&self, domain: &[(f64, f64)]) -> (f64, f64) {
        match self {
            Expr::Const(c) => (*c, *c),
            Expr::Var(i) => domain[*i],
            Expr::Add(a, b) => {
                let (a, b) = (a.bounds(domain), b.bounds(domain));
                (a.0 + b.0, a.1 + b.1)
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.bounds(domain), b.bounds(domain));
                let c = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
                (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
            Expr::Pow(a, p) => pow_bounds(a.bounds(domain), *p),
            Expr::Exp(a) => {
                let (lo, hi) = a.bounds(domain);
                (lo.exp(), hi.exp())
            }
            Expr::Tanh(a) => {
                let (lo, hi) = a.bounds(domain);
                (lo.tanh(), hi.tanh())
            }
        }
    }
}

fn is_integer(p: f64) -> bool {
    p.fract() == 0.0 && p.abs() < 1e9
}

#[inline]
fn pow(x: f64, p: f64) -> f64 {
    if is_integer(p) {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

fn pow_bounds((lo, hi): (f64, f64), p: f64) -> (f64, f64) {
    let (a, b) = (pow(lo, p), pow(hi, p));
    let (mut mn, mut mx) = (a.min(b), a.max(b));
    if lo <= 0.0 && hi >= 0.0 {
        if p > 0.0 {
            // the power attains 0 inside the interval
            mn = mn.min(0.0);
            mx = mx.max(0.0);
        } else {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
    }
    if !is_integer(p) && lo < 0.0 {
        return (f64::NAN, f64::NAN);
    }
    (mn, mx)
}

/// One-particle profile `φ` on `[-r, r]`, zero outside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    /// `e·exp(−1/(1 − (x/r)²))`, peak 1 at the centre.
    Bump { r: f64 },
    /// `sin(mπ(x + r)/(2r))`.
    SineWindow { r: f64, m: u32 },
    /// `(1 − (x/r)²)^p`.
    PolyWindow { r: f64, p: u32 },
    /// `φ(x) = x` on the window.
    Linear { r: f64 },
}

impl Profile {
    pub fn r(&self) -> f64 {
        match *self {
            Profile::Bump { r } | Profile::SineWindow { r, .. } | Profile::PolyWindow { r, .. } | Profile::Linear { r } => r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.r();
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("profile radius must be positive, got {r}")));
        }
        match *self {
            Profile::SineWindow { m: 0, .. } | Profile::PolyWindow { p: 0, .. } => {
                Err(Error::InvalidParameter("profile order must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let r = self.r();
        if x.abs() > r {
            return 0.0;
        }
        let s = x / r;
        match *self {
            Profile::Bump { .. } => {
                let q = 1.0 - s * s;
                if q <= 0.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / q).exp()
                }
            }
            Profile::SineWindow { m, .. } => (m as f64 * std::f64::consts::FRAC_PI_2 * (s + 1.0)).sin(),
            Profile::PolyWindow { p, .. } => (1.0 - s * s).powi(p as i32),
            Profile::Linear { .. } => x,
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let r = self.r();
        if x.abs() > r {
            return 0.0;
        }
        let s = x / r;
        match *self {
            Profile::Bump { .. } => {
                let q = 1.0 - s * s;
                if q <= 0.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / q).exp() * (-2.0 * s / (q * q)) / r
                }
            }
            Profile::SineWindow { m, .. } => {
                let w = m as f64 * std::f64::consts::FRAC_PI_2;
                w / r * (w * (s + 1.0)).cos()
            }
            Profile::PolyWindow { p, .. } => {
                -2.0 * p as f64 * s * (1.0 - s * s).powi(p as i32 - 1) / r
            }
            Profile::Linear { .. } => 1.0,
        }
    }

    /// Range of `φ` on the window.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            Profile::Bump { .. } | Profile::PolyWindow { .. } => (0.0, 1.0),
            Profile::SineWindow { m: 1, .. } => (0.0, 1.0),
            Profile::SineWindow { .. } => (-1.0, 1.0),
            Profile::Linear { r } => (-r, r),
        }
    }

    /// `sup |φ'|`, from the closed-form maximiser.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Profile::Bump { r } => {
                // maximiser of s·exp(−1/q)/q² solves 1 − 3s⁴ = 0
                let s = 3f64.powf(-0.25);
                let q = 1.0 - s * s;
                (1.0 - 1.0 / q).exp() * 2.0 * s / (q * q) / r
            }
            Profile::SineWindow { r, m } => m as f64 * std::f64::consts::FRAC_PI_2 / r,
            Profile::PolyWindow { r, p } => {
                let s = (1.0 / (2.0 * p as f64 - 1.0)).sqrt();
                2.0 * p as f64 * s * (1.0 - s * s).powi(p as i32 - 1) / r
            }
            Profile::Linear { .. } => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_expr() -> Expr {
        // tanh(v0) * v1^2 + exp(0.5 * v0)
        var(0).tanh().mul(var(1).powf(2.0)).add(constant(0.5).mul(var(0)).exp())
    }

    #[test]
    fn partials_match_finite_differences() {
        let e = sample_expr();
        let v = [0.3, -0.7];
        for i in 0..2 {
            let h = 1e-6;
            let mut vp = v;
            let mut vm = v;
            vp[i] += h;
            vm[i] -= h;
            let fd = (e.eval(&vp) - e.eval(&vm)) / (2.0 * h);
            assert!((e.partial(i).eval(&v) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn bounds_enclose_samples() {
        let e = sample_expr();
        let dom = [(-1.0, 2.0), (-0.5, 1.5)];
        let (lo, hi) = e.bounds(&dom);
        for a in 0..=30 {
            for b in 0..=30 {
                let v = [-1.0 + 3.0 * a as f64 / 30.0, -0.5 + 2.0 * b as f64 / 30.0];
                let y = e.eval(&v);
                assert!(lo <= y && y <= hi);
            }
        }
        assert_eq!(var(0).powf(2.0).bounds(&[(-1.0, 2.0)]), (0.0, 4.0));
    }

    #[test]
    fn profiles_vanish_outside_and_have_consistent_derivatives() {
        let profiles = [
            Profile::Bump { r: 1.5 },
            Profile::SineWindow { r: 1.5, m: 2 },
            Profile::PolyWindow { r: 1.5, p: 3 },
        ];
        for p in profiles {
            assert_eq!(p.value(1.6), 0.0);
            assert!(p.value(1.5).abs() < 1e-12);
            let mut max_d: f64 = 0.0;
            for i in 1..3000 {
                let x = -1.5 + 3.0 * i as f64 / 3000.0;
                let h = 1e-6;
                let fd = (p.value(x + h) - p.value(x - h)) / (2.0 * h);
                assert!((fd - p.derivative(x)).abs() < 1e-6, "{p:?} at {x}");
                max_d = max_d.max(p.derivative(x).abs());
                let (lo, hi) = p.range();
                assert!(p.value(x) >= lo - 1e-15 && p.value(x) <= hi + 1e-15);
            }
            assert!(max_d <= p.lipschitz() * (1.0 + 1e-12));
            assert!(max_d >= p.lipschitz() * (1.0 - 1e-4));
        }
    }
}
