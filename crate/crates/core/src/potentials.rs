//! Conditional Hamiltonians of k interior particles in the window `[-r, r]`
//! interacting with each other and with a frozen exterior.
//!
//! Dyson-log:
//! `Ψ(x) = −β Σ_{i<j} log|x_i − x_j| − β Σ_i Σ_y log|1 − x_i/y|`
//!
//! Riesz, `g(x) = |x|^{-s}`:
//! `Ψ(x) = β Σ_{i<j} g(x_i − x_j) + β Σ_i Σ_y (g(x_i − y) − g(y))`
//!
//! In both cases the exterior sum runs over `r < |y| ≤ R`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chebyshev::PiecewiseChebyshev;
use crate::config_space::{Configuration, ExteriorConfiguration};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionKind {
    #[serde(alias = "dyson")]
    DysonLog { beta: f64 },
    Riesz { beta: f64, s: f64 },
}

impl InteractionKind {
    pub fn validate(&self) -> Result<()> {
        let beta = self.beta();
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("β must be positive, got {beta}")));
        }
        if let InteractionKind::Riesz { s, .. } = *self {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::InvalidParameter(format!("Riesz exponent s must lie in (0,1), got {s}")));
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        match *self {
            InteractionKind::DysonLog { beta } | InteractionKind::Riesz { beta, .. } => beta,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InteractionKind::DysonLog { .. } => "dyson_log",
            InteractionKind::Riesz { .. } => "riesz",
        }
    }

    /// Pair energy `φ(d)` at separation `d > 0` (without β).
    #[inline]
    fn pair(&self, d: f64) -> f64 {
        match *self {
            InteractionKind::DysonLog { .. } => -d.abs().ln(),
            InteractionKind::Riesz { s, .. } => d.abs().powf(-s),
        }
    }

    /// `φ'(d)` (without β).
    #[inline]
    fn pair_prime(&self, d: f64) -> f64 {
        match *self {
            InteractionKind::DysonLog { .. } => -1.0 / d,
            InteractionKind::Riesz { s, .. } => {
                let a = d.abs();
                -s * d.signum() * inv_pow(a, s) / a
            }
        }
    }

    /// `φ''(d)` (without β).
    #[inline]
    fn pair_second(&self, d: f64) -> f64 {
        match *self {
            InteractionKind::DysonLog { .. } => 1.0 / (d * d),
            InteractionKind::Riesz { s, .. } => s * (s + 1.0) * d.abs().powf(-s - 2.0),
        }
    }

    /// Interaction of an interior particle at `x` with an exterior point `y`
    /// (renormalised so that it vanishes at `x = 0`).
    #[inline]
    fn exterior(&self, x: f64, y: f64) -> f64 {
        match *self {
            InteractionKind::DysonLog { .. } => -(1.0 - x / y).abs().ln(),
            InteractionKind::Riesz { s, .. } => (x - y).abs().powf(-s) - y.abs().powf(-s),
        }
    }
}

/// `a^{-s}` for `a > 0`; quarter-integer exponents avoid `powf`.
#[inline]
fn inv_pow(a: f64, s: f64) -> f64 {
    if s == 0.5 {
        1.0 / a.sqrt()
    } else if s == 0.25 {
        1.0 / a.sqrt().sqrt()
    } else if s == 0.75 {
        let q = a.sqrt().sqrt();
        1.0 / (q * q * q)
    } else {
        a.powf(-s)
    }
}

/// Tabulated force of the far exterior (points with `|y| ≥ 2r`), used by the
/// integrator only. Energies are always summed exactly.
#[derive(Clone, Debug)]
struct FarField {
    /// Active exterior points closer than the far-field threshold.
    near: Vec<f64>,
    /// `β Σ_{far y} φ'(x − y)` on `[-r, r]`.
    series: PiecewiseChebyshev,
}

#[derive(Clone, Debug)]
pub struct ConditionalPotential {
    kind: InteractionKind,
    exterior: ExteriorConfiguration,
    /// Exterior points with `|y| ≤ R`, the only ones that carry energy.
    active: Vec<f64>,
    far: Option<FarField>,
}

/// Minimum number of far points for which tabulation pays off.
const FAR_FIELD_MIN_POINTS: usize = 8;

impl ConditionalPotential {
    pub fn new(kind: InteractionKind, exterior: ExteriorConfiguration) -> Result<Self> {
        kind.validate()?;
        let active: Vec<f64> = exterior.active().collect();
        let r = exterior.r();
        let (near, far_pts): (Vec<f64>, Vec<f64>) = active.iter().partition(|y| y.abs() < 2.0 * r);
        let far = (far_pts.len() >= FAR_FIELD_MIN_POINTS).then(|| {
            let beta = kind.beta();
            let f = |x: f64| beta * far_pts.iter().map(|&y| kind.pair_prime(x - y)).sum::<f64>();
            FarField { near, series: PiecewiseChebyshev::fit(f, -r, r, 32, 10) }
        });
        Ok(Self { kind, exterior, active, far })
    }

    /// Potential without exterior on `[-r, r]`.
    pub fn free(kind: InteractionKind, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("window radius must be positive, got {r}")));
        }
        Self::new(kind, ExteriorConfiguration::empty(r))
    }

    pub fn kind(&self) -> InteractionKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.kind.beta()
    }

    pub fn r(&self) -> f64 {
        self.exterior.r()
    }

    pub fn cutoff(&self) -> f64 {
        self.exterior.cutoff()
    }

    pub fn exterior(&self) -> &ExteriorConfiguration {
        &self.exterior
    }

    pub fn active_exterior(&self) -> &[f64] {
        &self.active
    }

    /// Same interaction, exterior points beyond `R` dropped.
    pub fn without_inert_exterior(&self) -> Result<Self> {
        let ext = ExteriorConfiguration::new(self.active.clone(), self.r(), self.cutoff())?;
        Self::new(self.kind, ext)
    }

    fn check_window(&self, x: &[f64]) -> Result<()> {
        let r = self.r();
        match x.iter().find(|p| !(p.abs() <= r)) {
            Some(&p) => Err(Error::OutsideWindow { point: p, r }),
            None => Ok(()),
        }
    }

    /// `Ψ(γ)`, `+∞` on collisions.
    pub fn energy(&self, gamma: &Configuration) -> Result<f64> {
        self.check_window(gamma.points())?;
        Ok(self.energy_of(gamma.points()))
    }

    /// Energy of an unordered coordinate list, assumed to lie in the window.
    pub fn energy_of(&self, x: &[f64]) -> f64 {
        let beta = self.beta();
        let mut e = 0.0;
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                let d = x[i] - x[j];
                if d == 0.0 {
                    return f64::INFINITY;
                }
                e += self.kind.pair(d);
            }
            for &y in &self.active {
                if x[i] == y {
                    return f64::INFINITY;
                }
                e += self.kind.exterior(x[i], y);
            }
        }
        beta * e
    }

    /// One-particle energy `Ψ(x)` for `k = 1`.
    pub fn energy_1p(&self, x: f64) -> f64 {
        self.energy_of(std::slice::from_ref(&x))
    }

    /// The terms of `Ψ` that involve particle `i` when it sits at `xi`.
    pub fn site_energy(&self, x: &[f64], i: usize, xi: f64) -> f64 {
        let mut e = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            if j != i {
                if xj == xi {
                    return f64::INFINITY;
                }
                e += self.kind.pair(xi - xj);
            }
        }
        for &y in &self.active {
            e += self.kind.exterior(xi, y);
        }
        self.beta() * e
    }

    pub fn gradient(&self, gamma: &Configuration) -> Result<Vec<f64>> {
        self.check_window(gamma.points())?;
        if gamma.has_coincident_points() {
            return Err(Error::Collision);
        }
        let mut out = vec![0.0; gamma.count()];
        self.gradient_into(gamma.points(), &mut out);
        if out.iter().any(|g| !g.is_finite()) {
            return Err(Error::Collision);
        }
        Ok(out)
    }

    /// Exact gradient of an unordered, collision-free coordinate list.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.pair_gradient_into(x, out);
        let beta = self.beta();
        for (o, &xi) in out.iter_mut().zip(x) {
            *o += beta * self.active.iter().map(|&y| self.kind.pair_prime(xi - y)).sum::<f64>();
        }
    }

    /// Gradient used by the integrator: as [`Self::gradient_into`] but with the
    /// far exterior taken from its Chebyshev table (error below 1e-13).
    pub fn drift_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let Some(far) = &self.far else {
            return self.gradient_into(x, out);
        };
        self.pair_gradient_into(x, out);
        let beta = self.beta();
        for (o, &xi) in out.iter_mut().zip(x) {
            *o += far.series.eval(xi)
                + beta * far.near.iter().map(|&y| self.kind.pair_prime(xi - y)).sum::<f64>();
        }
    }

    fn pair_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let beta = self.beta();
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                let g = beta * self.kind.pair_prime(x[i] - x[j]);
                out[i] += g;
                out[j] -= g;
            }
        }
    }

    /// `v ∇²Ψ(γ) vᵀ`, written as the sum of the (nonnegative) pair and exterior
    /// blocks.
    pub fn hessian_quadratic_form(&self, gamma: &Configuration, v: &[f64]) -> Result<f64> {
        if v.len() != gamma.count() {
            return Err(Error::DimensionMismatch { expected: gamma.count(), got: v.len() });
        }
        self.check_window(gamma.points())?;
        Ok(self.hessian_form_of(gamma.points(), v))
    }

    pub fn hessian_form_of(&self, x: &[f64], v: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                let dv = v[i] - v[j];
                q += dv * dv * self.kind.pair_second(x[i] - x[j]);
            }
            for &y in &self.active {
                q += v[i] * v[i] * self.kind.pair_second(x[i] - y);
            }
        }
        self.beta() * q
    }
}

/// JSON form of a potential: `{kind, beta, s?, r, R, exterior}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: KindTag,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub r: f64,
    #[serde(rename = "R")]
    pub cutoff: f64,
    #[serde(default)]
    pub exterior: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindTag {
    #[serde(alias = "dyson_log")]
    Dyson,
    Riesz,
}

impl PotentialSpec {
    pub fn interaction(&self) -> Result<InteractionKind> {
        let kind = match (self.kind, self.s) {
            (KindTag::Dyson, None) => InteractionKind::DysonLog { beta: self.beta },
            (KindTag::Dyson, Some(_)) => {
                return Err(Error::InvalidParameter("`s` only applies to the Riesz kind".into()))
            }
            (KindTag::Riesz, Some(s)) => InteractionKind::Riesz { beta: self.beta, s },
            (KindTag::Riesz, None) => {
                return Err(Error::InvalidParameter("Riesz potential requires `s`".into()))
            }
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn build(&self) -> Result<ConditionalPotential> {
        let kind = self.interaction()?;
        let ext = ExteriorConfiguration::new(self.exterior.clone(), self.r, self.cutoff)?;
        ConditionalPotential::new(kind, ext)
    }

    pub fn from_potential(pot: &ConditionalPotential) -> Self {
        let (kind, s) = match pot.kind() {
            InteractionKind::DysonLog { .. } => (KindTag::Dyson, None),
            InteractionKind::Riesz { s, .. } => (KindTag::Riesz, Some(s)),
        };
        Self {
            kind,
            beta: pot.beta(),
            s,
            r: pot.r(),
            cutoff: pot.cutoff(),
            exterior: pot.exterior().points().to_vec(),
        }
    }
}

pub fn parse_potential_spec(json: &str) -> Result<PotentialSpec> {
    serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub kind: String,
    pub beta: f64,
    pub k: usize,
    pub trials: usize,
    pub directions_per_trial: usize,
    pub min_quadratic_form: f64,
    /// Smallest `((Ψ(x)+Ψ(y))/2 − Ψ((x+y)/2)) / scale` over the segments.
    pub min_midpoint_slack: f64,
    pub quadratic_form_tolerance: f64,
    pub midpoint_tolerance: f64,
    pub passed: bool,
}

pub const DIRECTIONS_PER_TRIAL: usize = 10;

/// Draws a sorted configuration of `k` points in `[-r, r]` whose gaps exceed
/// `min_gap`.
pub(crate) fn random_ordered<R: Rng>(rng: &mut R, k: usize, r: f64, min_gap: f64) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = (0..k).map(|_| rng.random_range(-r..=r)).collect();
        x.sort_by(f64::total_cmp);
        if x.windows(2).all(|w| w[1] - w[0] > min_gap) {
            return x;
        }
    }
}

/// Random search for negative curvature: Hessian forms along random unit
/// directions, and midpoint convexity along segments between random ordered
/// configurations.
pub fn certify_convexity(pot: &ConditionalPotential, k: usize, trials: usize, seed: u64) -> ConvexityReport {
    const QF_TOL: f64 = -1e-10;
    const MID_TOL: f64 = -1e-9;
    let mut rng = rng::stream(seed, 0);
    let r = pot.r();
    let min_gap = 1e-6 * r;
    let mut min_qf = f64::INFINITY;
    let mut min_slack = f64::INFINITY;
    for _ in 0..trials.max(1) {
        let x = random_ordered(&mut rng, k, r, min_gap);
        for _ in 0..DIRECTIONS_PER_TRIAL {
            let mut v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            min_qf = min_qf.min(pot.hessian_form_of(&x, &v));
        }
        let y = random_ordered(&mut rng, k, r, min_gap);
        let m: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let (ex, ey, em) = (pot.energy_of(&x), pot.energy_of(&y), pot.energy_of(&m));
        let scale = ex.abs().max(ey.abs()).max(em.abs());
        let slack = if scale > 0.0 { (0.5 * (ex + ey) - em) / scale } else { 0.0 };
        min_slack = min_slack.min(slack);
    }
    ConvexityReport {
        kind: pot.kind().name().to_string(),
        beta: pot.beta(),
        k,
        trials,
        directions_per_trial: DIRECTIONS_PER_TRIAL,
        min_quadratic_form: min_qf,
        min_midpoint_slack: min_slack,
        quadratic_form_tolerance: QF_TOL,
        midpoint_tolerance: MID_TOL,
        passed: min_qf >= QF_TOL && min_slack >= MID_TOL,
    }
}
