//! Grid Fokker–Planck flow, entropy functionals, interval W₂ and the JKO
//! scheme.
//!
//! The forward equation of `A = ½Δ − ½∇Ψ·∇` with reflection is
//! `∂_t p = ½ ∇·(∇p + p∇Ψ)` with no flux through the walls. It is discretised
//! by a cell-centred finite-volume scheme with Scharfetter–Gummel fluxes,
//! which keeps the discrete Gibbs density `e^{−Ψ}/Z` exactly stationary.
//!
//! Time constant. Along this flow `d/dt Ent = −½ F` with
//! `F = 4∫|∇√ρ|² dμ`, i.e. the flow is the W₂ gradient flow of the entropy
//! run at speed [`CLOCK`] `= ½`. The JKO scheme therefore uses
//! `Ent(q) + W₂²(p,q)/(2·CLOCK·τ)` and the evolution variational inequality
//! is stated for `W_E = W₂/√CLOCK`. [`calibrate_clock`] re-derives the
//! constant on a closed-form Ornstein–Uhlenbeck flow.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::potentials::ConditionalPotential;

/// Ratio between the Fokker–Planck clock and the W₂ gradient-flow clock.
pub const CLOCK: f64 = 0.5;

/// Candidates considered by the clock calibration.
pub const CLOCK_CANDIDATES: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum Domain {
    /// `n` cells on `[-r, r]`.
    Interval { r: f64, n: usize },
    /// Cells `(a, b)`, `a < b`, of the `n × n` grid on `[-r, r]²`: the
    /// ordered triangle `x₁ < x₂` up to a staircase along the diagonal.
    Triangle { r: f64, n: usize },
}

impl Domain {
    pub fn r(&self) -> f64 {
        match *self {
            Domain::Interval { r, .. } | Domain::Triangle { r, .. } => r,
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            Domain::Interval { n, .. } | Domain::Triangle { n, .. } => n,
        }
    }

    pub fn h(&self) -> f64 {
        2.0 * self.r() / self.n() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let (r, n) = (self.r(), self.n());
        if !(r > 0.0 && r.is_finite()) || n < 2 {
            return Err(Error::InvalidParameter(format!("bad grid: r = {r}, n = {n}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match *self {
            Domain::Interval { n, .. } => n,
            Domain::Triangle { n, .. } => n * (n - 1) / 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight (cell volume).
    pub fn weight(&self) -> f64 {
        match self {
            Domain::Interval { .. } => self.h(),
            Domain::Triangle { .. } => self.h() * self.h(),
        }
    }

    pub fn center_1d(&self, a: usize) -> f64 {
        -self.r() + (a as f64 + 0.5) * self.h()
    }

    /// Coordinates of cell `idx`.
    pub fn center(&self, idx: usize) -> Vec<f64> {
        match *self {
            Domain::Interval { .. } => vec![self.center_1d(idx)],
            Domain::Triangle { n, .. } => {
                let (a, b) = tri_cell(n, idx);
                vec![self.center_1d(a), self.center_1d(b)]
            }
        }
    }

    /// Neighbouring cell pairs `(i, j)`, each listed once.
    fn interfaces(&self) -> Vec<(usize, usize)> {
        match *self {
            Domain::Interval { n, .. } => (0..n - 1).map(|i| (i, i + 1)).collect(),
            Domain::Triangle { n, .. } => {
                let mut out = Vec::new();
                for a in 0..n {
                    for b in (a + 1)..n {
                        if b + 1 < n {
                            out.push((tri_index(n, a, b), tri_index(n, a, b + 1)));
                        }
                        if a + 1 < b {
                            out.push((tri_index(n, a, b), tri_index(n, a + 1, b)));
                        }
                    }
                }
                out
            }
        }
    }
}

fn tri_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < n);
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

fn tri_cell(n: usize, idx: usize) -> (usize, usize) {
    let mut a = 0;
    let mut start = 0;
    while start + (n - a - 1) <= idx {
        start += n - a - 1;
        a += 1;
    }
    (a, a + 1 + idx - start)
}

/// Density with respect to Lebesgue measure, piecewise constant on cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub domain: Domain,
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Normalises the given cell values.
    pub fn new(domain: Domain, values: Vec<f64>) -> Result<Self> {
        domain.validate()?;
        if values.len() != domain.len() {
            return Err(Error::DimensionMismatch { expected: domain.len(), got: values.len() });
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("density values must be finite and nonnegative".into()));
        }
        let mass: f64 = values.iter().sum::<f64>() * domain.weight();
        if !(mass > 0.0) {
            return Err(Error::VanishingDensity);
        }
        Ok(Self { domain, values: values.into_iter().map(|v| v / mass).collect() })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(domain: Domain, f: F) -> Result<Self> {
        domain.validate()?;
        let values = (0..domain.len()).map(|i| f(&domain.center(i))).collect();
        Self::new(domain, values)
    }

    pub fn uniform(domain: Domain) -> Result<Self> {
        Self::from_fn(domain, |_| 1.0)
    }

    /// Cell masses given directly (interval only).
    pub fn from_masses(domain: Domain, masses: &[f64]) -> Result<Self> {
        let h = domain.weight();
        Self::new(domain, masses.iter().map(|m| m / h).collect())
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.domain.weight()
    }

    pub fn masses(&self) -> Vec<f64> {
        let w = self.domain.weight();
        self.values.iter().map(|v| v * w).collect()
    }

    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.domain.weight()
    }

    pub fn mean(&self) -> f64 {
        let w = self.domain.weight();
        (0..self.values.len()).map(|i| self.domain.center(i)[0] * self.values[i] * w).sum()
    }
}

/// One-particle potential with derivatives, as needed by the Lagrangian JKO
/// solver.
pub trait OneBody: Sync {
    fn psi(&self, x: f64) -> f64;
    fn dpsi(&self, x: f64) -> f64;
    fn d2psi(&self, x: f64) -> f64;
}

impl OneBody for ConditionalPotential {
    fn psi(&self, x: f64) -> f64 {
        self.energy_1p(x)
    }

    fn dpsi(&self, x: f64) -> f64 {
        let mut g = [0.0];
        self.gradient_into(&[x], &mut g);
        g[0]
    }

    fn d2psi(&self, x: f64) -> f64 {
        self.hessian_form_of(&[x], &[1.0])
    }
}

/// `Ψ(x) = (x − center)²/(2σ²)`: Gaussian invariant law `N(center, σ²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadratic {
    pub center: f64,
    pub sigma: f64,
}

impl OneBody for Quadratic {
    fn psi(&self, x: f64) -> f64 {
        (x - self.center).powi(2) / (2.0 * self.sigma * self.sigma)
    }

    fn dpsi(&self, x: f64) -> f64 {
        (x - self.center) / (self.sigma * self.sigma)
    }

    fn d2psi(&self, _x: f64) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

/// `Ψ ≡ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flat;

impl OneBody for Flat {
    fn psi(&self, _x: f64) -> f64 {
        0.0
    }
    fn dpsi(&self, _x: f64) -> f64 {
        0.0
    }
    fn d2psi(&self, _x: f64) -> f64 {
        0.0
    }
}

/// Potential sampled at cell centres.
#[derive(Clone, Debug, PartialEq)]
pub struct Landscape {
    pub domain: Domain,
    pub psi: Vec<f64>,
}

impl Landscape {
    pub fn interval(domain: Domain, pot: &dyn OneBody) -> Result<Self> {
        domain.validate()?;
        if !matches!(domain, Domain::Interval { .. }) {
            return Err(Error::InvalidParameter("one-body landscape needs an interval domain".into()));
        }
        Ok(Self { psi: (0..domain.len()).map(|i| pot.psi(domain.center_1d(i))).collect(), domain })
    }

    /// Two-particle landscape on the ordered triangle.
    pub fn pair(domain: Domain, pot: &ConditionalPotential) -> Result<Self> {
        domain.validate()?;
        if !matches!(domain, Domain::Triangle { .. }) {
            return Err(Error::InvalidParameter("pair landscape needs a triangle domain".into()));
        }
        if (domain.r() - pot.r()).abs() > 1e-12 * pot.r() {
            return Err(Error::InvalidParameter("grid and potential windows differ".into()));
        }
        Ok(Self { psi: (0..domain.len()).map(|i| pot.energy_of(&domain.center(i))).collect(), domain })
    }

    /// Discrete Gibbs density `e^{−Ψ}/Z`.
    pub fn stationary(&self) -> Result<GridDensity> {
        let min = self.psi.iter().copied().fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return Err(Error::VanishingDensity);
        }
        GridDensity::new(self.domain, self.psi.iter().map(|p| (min - p).exp()).collect())
    }

    fn check(&self, p: &GridDensity) -> Result<()> {
        if p.domain != self.domain {
            return Err(Error::InvalidParameter("density and landscape live on different grids".into()));
        }
        Ok(())
    }
}

/// Bernoulli function `z/(e^z − 1)`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

struct Scheme {
    /// `(i, j, a, b)`: density flows `i → j` at rate `a p_i − b p_j`.
    links: Vec<(usize, usize, f64, f64)>,
    max_dt: f64,
}

fn scheme(land: &Landscape) -> Scheme {
    let h = land.domain.h();
    let c = 1.0 / (2.0 * h * h);
    let mut out_rate = vec![0.0; land.domain.len()];
    let links: Vec<_> = land
        .domain
        .interfaces()
        .into_iter()
        .map(|(i, j)| {
            let z = land.psi[j] - land.psi[i];
            let (a, b) = if z.is_finite() {
                (c * bernoulli(z), c * bernoulli(-z))
            } else {
                // a cell of infinite energy carries no mass: seal it off
                (0.0, 0.0)
            };
            out_rate[i] += a;
            out_rate[j] += b;
            (i, j, a, b)
        })
        .collect();
    let max_rate = out_rate.iter().copied().fold(0.0, f64::max);
    Scheme { links, max_dt: if max_rate > 0.0 { 1.0 / max_rate } else { f64::INFINITY } }
}

/// Largest explicit step that keeps the scheme positive.
pub fn max_stable_dt(land: &Landscape) -> f64 {
    scheme(land).max_dt
}

/// Evolves `p0` for time `t` with steps no larger than `dt`.
pub fn fokker_planck_evolve(p0: &GridDensity, land: &Landscape, t: f64, dt: f64) -> Result<GridDensity> {
    land.check(p0)?;
    let sch = scheme(land);
    let n_steps = crate::dynamics::steps_for(t, dt);
    if n_steps == 0 {
        return Ok(p0.clone());
    }
    let step = t / n_steps as f64;
    if step > sch.max_dt {
        return Err(Error::Cfl { dt: step, max_dt: sch.max_dt });
    }
    let mut p = p0.values.clone();
    let mut flux = vec![0.0; sch.links.len()];
    for _ in 0..n_steps {
        for (f, &(i, j, a, b)) in flux.iter_mut().zip(&sch.links) {
            *f = step * (a * p[i] - b * p[j]);
        }
        for (f, &(i, j, _, _)) in flux.iter().zip(&sch.links) {
            p[i] -= f;
            p[j] += f;
        }
    }
    Ok(GridDensity { domain: p0.domain, values: p })
}

/// Densities at each of the (non-decreasing) `times`.
pub fn fokker_planck_snapshots(p0: &GridDensity, land: &Landscape, times: &[f64], dt: f64) -> Result<Vec<GridDensity>> {
    let mut out = Vec::with_capacity(times.len());
    let mut cur = p0.clone();
    let mut now = 0.0;
    for &t in times {
        if t < now {
            return Err(Error::InvalidParameter("snapshot times must be non-decreasing".into()));
        }
        cur = fokker_planck_evolve(&cur, land, t - now, dt)?;
        now = t;
        out.push(cur.clone());
    }
    Ok(out)
}

/// `Ent_μ(ν) = Σ p log(p/μ) · w` with the discrete Gibbs density `μ`.
pub fn entropy(p: &GridDensity, land: &Landscape) -> Result<f64> {
    land.check(p)?;
    let mu = land.stationary()?;
    let w = p.domain.weight();
    let mut e = 0.0;
    for (&pi, &mi) in p.values.iter().zip(&mu.values) {
        if pi > 0.0 {
            if mi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            e += pi * (pi / mi).ln();
        }
    }
    Ok(e * w)
}

/// `F_μ(ν) = 4∫|∇√ρ|² dμ`, with Scharfetter–Gummel interface weights for `μ`.
pub fn fisher_information(p: &GridDensity, land: &Landscape) -> Result<f64> {
    land.check(p)?;
    let mu = land.stationary()?;
    let h = p.domain.h();
    let mut f = 0.0;
    for (i, j) in p.domain.interfaces() {
        let (mi, mj) = (mu.values[i], mu.values[j]);
        if mi <= 0.0 && mj <= 0.0 {
            continue;
        }
        let (ri, rj) = (
            if mi > 0.0 { p.values[i] / mi } else { 0.0 },
            if mj > 0.0 { p.values[j] / mj } else { 0.0 },
        );
        if (mi <= 0.0 && p.values[i] > 0.0) || (mj <= 0.0 && p.values[j] > 0.0) {
            return Ok(f64::INFINITY);
        }
        let weight = if mi > 0.0 { mi * bernoulli(land.psi[j] - land.psi[i]) } else { mj * bernoulli(land.psi[i] - land.psi[j]) };
        let d = (rj.sqrt() - ri.sqrt()) / h;
        f += weight * d * d;
    }
    Ok(4.0 * f * p.domain.weight())
}

/// Quantile function of a piecewise-uniform interval density: breakpoints
/// `(s, x)` with `s` the cumulative mass.
fn quantile_knots(p: &GridDensity) -> Result<Vec<(f64, f64)>> {
    let Domain::Interval { r, n } = p.domain else {
        return Err(Error::InvalidParameter("W₂ is implemented on the interval only".into()));
    };
    let h = 2.0 * r / n as f64;
    let total = p.mass();
    let mut knots = Vec::with_capacity(n + 1);
    let mut s = 0.0;
    knots.push((0.0, -r));
    for (j, v) in p.values.iter().enumerate() {
        s += v * h / total;
        knots.push((s, -r + (j + 1) as f64 * h));
    }
    knots.last_mut().unwrap().0 = 1.0;
    Ok(knots)
}

/// Merged pieces `(s_a, s_b, qp(s_a+), qp(s_b−), qq(s_a+), qq(s_b−))`.
fn merged_pieces(p: &GridDensity, q: &GridDensity) -> Result<Vec<[f64; 6]>> {
    let kp = quantile_knots(p)?;
    let kq = quantile_knots(q)?;
    let mut ss: Vec<f64> = kp.iter().chain(&kq).map(|k| k.0).collect();
    ss.sort_by(f64::total_cmp);
    ss.dedup();
    let mut out = Vec::with_capacity(ss.len());
    let (mut hp, mut hq) = (0usize, 0usize);
    for w in ss.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        // locate pieces by their midpoint, then evaluate the linear pieces at the ends
        let xp = piece(&kp, mid, &mut hp);
        let xq = piece(&kq, mid, &mut hq);
        out.push([a, b, xp.0 + xp.1 * (a - xp.2), xp.0 + xp.1 * (b - xp.2), xq.0 + xq.1 * (a - xq.2), xq.0 + xq.1 * (b - xq.2)]);
    }
    Ok(out)
}

/// Linear piece containing `s`: `(x0, slope, s0)`.
fn piece(knots: &[(f64, f64)], s: f64, hint: &mut usize) -> (f64, f64, f64) {
    while *hint + 2 < knots.len() && knots[*hint + 1].0 <= s {
        *hint += 1;
    }
    let (s0, x0) = knots[*hint];
    let (s1, x1) = knots[*hint + 1];
    (x0, (x1 - x0) / (s1 - s0), s0)
}

/// Exact `W₂` between piecewise-uniform densities on the interval.
pub fn w2_interval(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    let mut acc = 0.0;
    for [a, b, p0, p1, q0, q1] in merged_pieces(p, q)? {
        let (d0, d1) = (p0 - q0, p1 - q1);
        acc += (b - a) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    Ok(acc.max(0.0).sqrt())
}

/// Lagrangian state of the JKO scheme: fixed cell masses between moving
/// edges, the outer edges pinned at `±r`.
#[derive(Clone, Debug)]
pub struct LagrangianDensity {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

const MASS_FLOOR: f64 = 1e-10;

impl LagrangianDensity {
    pub fn from_grid(p: &GridDensity) -> Result<Self> {
        let Domain::Interval { r, n } = p.domain else {
            return Err(Error::InvalidParameter("JKO is implemented on the interval only".into()));
        };
        let h = 2.0 * r / n as f64;
        let mut masses: Vec<f64> = p.values.iter().map(|v| (v * h).max(MASS_FLOOR)).collect();
        let total: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|m| *m /= total);
        let edges = (0..=n).map(|j| -r + j as f64 * h).collect();
        Ok(Self { edges, masses })
    }

    /// Cell averages on `domain` of the density whose distribution function
    /// is the monotone cubic interpolant of the knots `(edges, cumulative
    /// masses)`. Exact when the edges coincide with the grid.
    pub fn to_grid(&self, domain: Domain) -> Result<GridDensity> {
        let n = domain.n();
        let (r, h) = (domain.r(), domain.h());
        let mut cum = Vec::with_capacity(self.masses.len() + 1);
        cum.push(0.0);
        for m in &self.masses {
            cum.push(cum.last().unwrap() + m);
        }
        let cdf = MonotoneCubic::new(&self.edges, &cum);
        let mut hint = 0usize;
        let f: Vec<f64> = (0..=n).map(|c| cdf.eval(-r + c as f64 * h, &mut hint)).collect();
        let masses: Vec<f64> = f.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        GridDensity::from_masses(domain, &masses)
    }
}

/// Fritsch–Carlson monotone cubic Hermite interpolant.
struct MonotoneCubic<'a> {
    x: &'a [f64],
    y: &'a [f64],
    slope: Vec<f64>,
}

impl<'a> MonotoneCubic<'a> {
    fn new(x: &'a [f64], y: &'a [f64]) -> Self {
        let k = x.len();
        let delta: Vec<f64> = (0..k - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut slope = vec![0.0; k];
        slope[0] = delta[0];
        slope[k - 1] = delta[k - 2];
        for i in 1..k - 1 {
            let (a, b) = (delta[i - 1], delta[i]);
            slope[i] = if a * b <= 0.0 {
                0.0
            } else {
                // weighted harmonic mean keeps the interpolant monotone
                let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
                let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
                (w1 + w2) / (w1 / a + w2 / b)
            };
        }
        Self { x, y, slope }
    }

    fn eval(&self, t: f64, hint: &mut usize) -> f64 {
        let k = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[k - 1] {
            return self.y[k - 1];
        }
        while self.x[*hint + 1] < t {
            *hint += 1;
        }
        let i = *hint;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[i]
            + (s3 - 2.0 * s2 + s) * h * self.slope[i]
            + (-2.0 * s3 + 3.0 * s2) * self.y[i + 1]
            + (s3 - s2) * h * self.slope[i + 1]
    }
}

fn jko_objective(x: &[f64], prev: &[f64], m: &[f64], pot: &dyn OneBody, lam: f64) -> f64 {
    let mut v = 0.0;
    for j in 0..m.len() {
        let d = x[j + 1] - x[j];
        if d <= 0.0 {
            return f64::INFINITY;
        }
        let (a, b) = (x[j] - prev[j], x[j + 1] - prev[j + 1]);
        v += m[j] * (m[j] / d).ln() + m[j] * pot.psi(0.5 * (x[j] + x[j + 1])) + lam * m[j] * (a * a + a * b + b * b) / 3.0;
    }
    v
}

/// Gradient and tridiagonal Hessian with respect to the interior edges.
fn jko_derivatives(x: &[f64], prev: &[f64], m: &[f64], pot: &dyn OneBody, lam: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = m.len();
    // full-length arrays over edges 0..=n, interior rows extracted afterwards
    let mut g = vec![0.0; n + 1];
    let mut diag = vec![0.0; n + 1];
    let mut off = vec![0.0; n];
    for j in 0..n {
        let d = x[j + 1] - x[j];
        let mid = 0.5 * (x[j] + x[j + 1]);
        let (a, b) = (x[j] - prev[j], x[j + 1] - prev[j + 1]);
        let e1 = m[j] / d;
        let e2 = m[j] / (d * d);
        let p1 = 0.5 * m[j] * pot.dpsi(mid);
        let p2 = 0.25 * m[j] * pot.d2psi(mid);
        g[j] += e1 + p1 + lam * m[j] * (2.0 * a + b) / 3.0;
        g[j + 1] += -e1 + p1 + lam * m[j] * (a + 2.0 * b) / 3.0;
        diag[j] += e2 + p2 + lam * 2.0 * m[j] / 3.0;
        diag[j + 1] += e2 + p2 + lam * 2.0 * m[j] / 3.0;
        off[j] += -e2 + p2 + lam * m[j] / 3.0;
    }
    (g[1..n].to_vec(), diag[1..n].to_vec(), off[1..n - 1].to_vec())
}

/// Solves the symmetric tridiagonal system; `None` on a non-positive pivot.
fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if !(piv > 0.0) {
        return None;
    }
    c[0] = if n > 1 { off[0] / piv } else { 0.0 };
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - off[i - 1] * c[i - 1];
        if !(piv > 0.0) {
            return None;
        }
        c[i] = if i + 1 < n { off[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// One JKO step in Lagrangian coordinates, solved by damped Newton.
pub fn jko_step_lagrangian(state: &LagrangianDensity, pot: &dyn OneBody, tau: f64, clock: f64) -> Result<LagrangianDensity> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("τ must be positive, got {tau}")));
    }
    let lam = 1.0 / (2.0 * clock * tau);
    let prev = &state.edges;
    let m = &state.masses;
    let n = m.len();
    let mut x = prev.clone();
    let mut val = jko_objective(&x, prev, m, pot, lam);
    const MAX_ITER: usize = 100;
    let mut gnorm = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let (g, mut diag, off) = jko_derivatives(&x, prev, m, pot, lam);
        gnorm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gnorm <= 1e-11 {
            return Ok(LagrangianDensity { edges: x, masses: m.clone() });
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut shift = 0.0;
        let step = loop {
            if let Some(s) = thomas(&diag, &off, &rhs) {
                break s;
            }
            shift = if shift == 0.0 { 1e-8 * lam } else { shift * 10.0 };
            diag.iter_mut().for_each(|d| *d += shift);
        };
        // positions resolved to roundoff
        if shift == 0.0 && step.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= 1e-13 * (x[n] - x[0]) {
            return Ok(LagrangianDensity { edges: x, masses: m.clone() });
        }
        let mut alpha = 1.0;
        loop {
            let mut y = x.clone();
            for i in 0..n - 1 {
                y[i + 1] += alpha * step[i];
            }
            let v = jko_objective(&y, prev, m, pot, lam);
            let better = v.is_finite() && (v <= val || {
                let (gy, _, _) = jko_derivatives(&y, prev, m, pot, lam);
                gy.iter().fold(0.0f64, |a, u| a.max(u.abs())) < gnorm
            });
            if better {
                x = y;
                val = v;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                return Err(Error::NoConvergence { iterations: MAX_ITER, residual: gnorm });
            }
        }
    }
    if gnorm <= 1e-8 {
        return Ok(LagrangianDensity { edges: x, masses: m.clone() });
    }
    Err(Error::NoConvergence { iterations: MAX_ITER, residual: gnorm })
}

/// Minimiser of `Ent(q) + W₂²(p, q)/(2·clock·τ)`, returned on `p`'s grid.
pub fn jko_step(p: &GridDensity, pot: &dyn OneBody, tau: f64, clock: f64) -> Result<GridDensity> {
    let state = LagrangianDensity::from_grid(p)?;
    jko_step_lagrangian(&state, pot, tau, clock)?.to_grid(p.domain)
}

/// JKO trajectory from `p0`, keeping the Lagrangian state between steps;
/// returns grid densities at `times` (rounded to multiples of `τ`).
pub fn jko_flow(p0: &GridDensity, pot: &dyn OneBody, tau: f64, clock: f64, times: &[f64]) -> Result<Vec<GridDensity>> {
    let mut state = LagrangianDensity::from_grid(p0)?;
    let mut done = 0usize;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let target = (t / tau).round() as usize;
        if target < done {
            return Err(Error::InvalidParameter("snapshot times must be non-decreasing".into()));
        }
        while done < target {
            state = jko_step_lagrangian(&state, pot, tau, clock)?;
            done += 1;
        }
        out.push(state.to_grid(p0.domain)?);
    }
    Ok(out)
}

/// Cell masses of `N(mean, var)` on the interval grid, renormalised.
pub fn gaussian_cells(domain: Domain, mean: f64, var: f64) -> Result<GridDensity> {
    let h = domain.h();
    let r = domain.r();
    let s = (2.0 * var).sqrt();
    let masses: Vec<f64> = (0..domain.n())
        .map(|j| {
            let a = -r + j as f64 * h;
            0.5 * (erf((a + h - mean) / s) - erf((a - mean) / s))
        })
        .collect();
    GridDensity::from_masses(domain, &masses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockCalibration {
    /// `(c, L¹ error against the closed form at t_final)`.
    pub candidates: Vec<(f64, f64)>,
    pub chosen: f64,
    pub residual: f64,
    pub tau: f64,
    pub t_final: f64,
    pub n: usize,
}

/// Ornstein–Uhlenbeck set-up of the calibration: `Ψ = x²/(2σ²)`, `σ = ½`, on
/// `[-2, 2]`, started from `N(0.5, 0.3²)`. Under `A` the law stays Gaussian
/// with mean `m₀e^{−θt}` and variance `σ² + (v₀ − σ²)e^{−2θt}`,
/// `θ = 1/(2σ²)`.
pub fn ou_closed_form(domain: Domain, t: f64) -> Result<GridDensity> {
    let (sigma, m0, v0) = (0.5f64, 0.5f64, 0.09f64);
    let theta = 1.0 / (2.0 * sigma * sigma);
    let mean = m0 * (-theta * t).exp();
    let var = sigma * sigma + (v0 - sigma * sigma) * (-2.0 * theta * t).exp();
    gaussian_cells(domain, mean, var)
}

pub const OU_POTENTIAL: Quadratic = Quadratic { center: 0.0, sigma: 0.5 };

/// Picks the time constant in [`CLOCK_CANDIDATES`] whose JKO flow best matches
/// the closed-form Ornstein–Uhlenbeck law at `t_final`.
pub fn calibrate_clock(n: usize, tau: f64, t_final: f64) -> Result<ClockCalibration> {
    let domain = Domain::Interval { r: 2.0, n };
    let p0 = ou_closed_form(domain, 0.0)?;
    let exact = ou_closed_form(domain, t_final)?;
    let mut candidates = Vec::new();
    for &c in &CLOCK_CANDIDATES {
        let pt = jko_flow(&p0, &OU_POTENTIAL, tau, c, &[t_final])?.pop().unwrap();
        candidates.push((c, pt.l1_distance(&exact)));
    }
    let &(chosen, residual) = candidates.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    Ok(ClockCalibration { candidates, chosen, residual, tau, t_final, n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EviRow {
    pub t0: f64,
    pub t1: f64,
    /// `½ (W_E²(t1) − W_E²(t0)) / (t1 − t0)`.
    pub lhs: f64,
    /// Trapezoid average of `Ent(ν) − Ent(σ_t) − (K/2) W_E²(σ_t, ν)`.
    pub rhs: f64,
    pub residual: f64,
}

/// Residuals of the evolution variational inequality along the
/// Fokker–Planck flow from `sigma0`, on the intervals of `t_grid`.
pub fn verify_evi(
    pot: &dyn OneBody,
    sigma0: &GridDensity,
    nu: &GridDensity,
    t_grid: &[f64],
    k_curv: f64,
    dt: f64,
) -> Result<Vec<EviRow>> {
    let land = Landscape::interval(sigma0.domain, pot)?;
    let snaps = fokker_planck_snapshots(sigma0, &land, t_grid, dt)?;
    let ent_nu = entropy(nu, &land)?;
    let node = |s: &GridDensity| -> Result<(f64, f64)> {
        let w2 = w2_interval(s, nu)?;
        let we2 = w2 * w2 / CLOCK;
        Ok((we2, ent_nu - entropy(s, &land)? - 0.5 * k_curv * we2))
    };
    let vals: Vec<(f64, f64)> = snaps.iter().map(node).collect::<Result<_>>()?;
    Ok(t_grid
        .windows(2)
        .zip(vals.windows(2))
        .map(|(t, v)| {
            let lhs = 0.5 * (v[1].0 - v[0].0) / (t[1] - t[0]);
            let rhs = 0.5 * (v[0].1 + v[1].1);
            EviRow { t0: t[0], t1: t[1], lhs, rhs, residual: rhs - lhs }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationRow {
    pub t: f64,
    pub entropy: f64,
    /// Central difference of the entropy.
    pub d_entropy: f64,
    /// `CLOCK · F`.
    pub dissipation: f64,
    /// `|dEnt/dt + CLOCK·F| / (CLOCK·F)` (0 when both vanish).
    pub relative_residual: f64,
}

/// Energy identity `d/dt Ent = −CLOCK·F` along the Fokker–Planck flow.
pub fn verify_dissipation(land: &Landscape, p0: &GridDensity, t_grid: &[f64], dt: f64) -> Result<Vec<DissipationRow>> {
    let delta = (10.0 * dt).max(1e-3).min(t_grid.iter().copied().filter(|t| *t > 0.0).fold(f64::INFINITY, f64::min) / 2.0);
    let mut times = Vec::with_capacity(3 * t_grid.len());
    for &t in t_grid {
        let lo = if t - delta < 0.0 { t } else { t - delta };
        times.extend([lo, t, t + delta]);
    }
    let snaps = fokker_planck_snapshots(p0, land, &times, dt)?;
    t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (a, m, b) = (&snaps[3 * i], &snaps[3 * i + 1], &snaps[3 * i + 2]);
            let span = times[3 * i + 2] - times[3 * i];
            let d = (entropy(b, land)? - entropy(a, land)?) / span;
            let diss = CLOCK * fisher_information(m, land)?;
            let rel = if diss > 0.0 {
                (d + diss).abs() / diss
            } else if d.abs() < 1e-14 {
                0.0
            } else {
                f64::INFINITY
            };
            Ok(DissipationRow { t, entropy: entropy(m, land)?, d_entropy: d, dissipation: diss, relative_residual: rel })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementConvexityReport {
    pub ts: Vec<f64>,
    /// `(1−t)Ent(p₀) + tEnt(p₁) − (K/2)t(1−t)W_E² − Ent(p_t)` at each `t`.
    pub slack: Vec<f64>,
    pub min_slack: f64,
}

/// Entropy of the McCann interpolant at `t`, computed in quantile
/// coordinates: `∫₀¹ −log X_t'(s) ds + ∫₀¹ Ψ(X_t(s)) ds + log Z`.
fn interpolant_entropy(pieces: &[[f64; 6]], t: f64, pot: &dyn OneBody, log_z: f64) -> f64 {
    let mut e = 0.0;
    for &[a, b, p0, p1, q0, q1] in pieces {
        let ds = b - a;
        let x0 = (1.0 - t) * p0 + t * q0;
        let x1 = (1.0 - t) * p1 + t * q1;
        let slope = (x1 - x0) / ds;
        if slope <= 0.0 {
            return f64::INFINITY;
        }
        let xm = 0.5 * (x0 + x1);
        e += ds * (-slope.ln() + (pot.psi(x0) + 4.0 * pot.psi(xm) + pot.psi(x1)) / 6.0);
    }
    e + log_z
}

fn log_partition(pot: &dyn OneBody, r: f64) -> f64 {
    let n = 8192;
    let h = 2.0 * r / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| -pot.psi(-r + i as f64 * h)).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = vals
        .iter()
        .enumerate()
        .map(|(i, v)| (v - max).exp() * if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    max + (s * h / 3.0).ln()
}

/// Convexity of the entropy along the W₂ geodesic from `p0` to `p1`, checked
/// at `samples` equally spaced interior times.
pub fn verify_displacement_convexity(
    pot: &dyn OneBody,
    p0: &GridDensity,
    p1: &GridDensity,
    samples: usize,
    k_curv: f64,
) -> Result<DisplacementConvexityReport> {
    let pieces = merged_pieces(p0, p1)?;
    let log_z = log_partition(pot, p0.domain.r());
    let e0 = interpolant_entropy(&pieces, 0.0, pot, log_z);
    let e1 = interpolant_entropy(&pieces, 1.0, pot, log_z);
    let w2 = w2_interval(p0, p1)?;
    let we2 = w2 * w2 / CLOCK;
    let ts: Vec<f64> = (1..=samples).map(|i| i as f64 / (samples + 1) as f64).collect();
    let slack: Vec<f64> = ts
        .iter()
        .map(|&t| (1.0 - t) * e0 + t * e1 - 0.5 * k_curv * t * (1.0 - t) * we2 - interpolant_entropy(&pieces, t, pot, log_z))
        .collect();
    let min_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DisplacementConvexityReport { ts, slack, min_slack })
}
