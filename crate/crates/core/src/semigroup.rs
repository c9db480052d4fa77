//! Monte-Carlo heat semigroup, the square field of cylinder observables, and
//! statistical checks of the curvature inequalities.
//!
//! All constants are for the clock `A = ½Δ − ½∇Ψ·∇` with the square field
//! `Γ(u) = Σ_x |∂_x u|²` and curvature `K` defined through
//! `Γ(T_t u) ≤ e^{−2Kt} T_t Γ(u)`. In that normalisation, at `K = 0`:
//!
//! * local Poincaré: `t Γ(T_t u) ≤ T_t u² − (T_t u)² ≤ t T_t Γ(u)`,
//! * log-Harnack: `T_t log f(γ) ≤ log T_t f(η) + d̄²/(2t)`,
//! * Harnack: `(T_t f)^α(γ) ≤ T_t f^α(η) · exp(α d̄² / (2(α−1)t))`,
//! * exponential integrability of 1-Lipschitz `u` for `s < √(2/t)`.
//!
//! Every statistic comes with a per-replica influence function, so the
//! standard error of a margin accounts for the correlation between its two
//! sides (both are computed on the same coupled replicas).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config_space::{bar_distance, Configuration};
use crate::dynamics::{simulate_replicas, SdeConfig};
use crate::error::{Error, Result};
use crate::expr::{Expr, Profile};
use crate::potentials::ConditionalPotential;
use crate::stats;

/// `u(γ) = F(⟨φ₁,γ⟩, …, ⟨φ_m,γ⟩)` with `⟨φ,γ⟩ = Σ_{x∈γ} φ(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderFunction {
    pub name: String,
    outer: Expr,
    profiles: Vec<Profile>,
    #[serde(skip)]
    partials: Vec<Expr>,
}

impl CylinderFunction {
    pub fn new(name: impl Into<String>, outer: Expr, profiles: Vec<Profile>) -> Result<Self> {
        if outer.arity() > profiles.len() {
            return Err(Error::InvalidParameter(format!(
                "outer map uses {} variables but only {} profiles are given",
                outer.arity(),
                profiles.len()
            )));
        }
        for p in &profiles {
            p.validate()?;
        }
        let partials = (0..profiles.len()).map(|j| outer.partial(j)).collect();
        Ok(Self { name: name.into(), outer, profiles, partials })
    }

    /// `⟨φ, γ⟩` for a single profile: the linear statistic.
    pub fn linear(name: impl Into<String>, profile: Profile) -> Result<Self> {
        Self::new(name, crate::expr::var(0), vec![profile])
    }

    pub fn outer(&self) -> &Expr {
        &self.outer
    }

    pub fn profiles(&self) -> &[Profile] {
        &self.profiles
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.profiles) {
            *o = x.iter().map(|&xi| p.value(xi)).sum();
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut f = [0.0; 8];
        if self.profiles.len() <= 8 {
            self.features(x, &mut f[..self.profiles.len()]);
            self.outer.eval(&f[..self.profiles.len()])
        } else {
            let mut f = vec![0.0; self.profiles.len()];
            self.features(x, &mut f);
            self.outer.eval(&f)
        }
    }

    /// `Σ_{x∈γ} (Σ_j ∂_jF(⟨φ,γ⟩) φ_j'(x))²`.
    pub fn carre_du_champ(&self, x: &[f64]) -> f64 {
        let m = self.profiles.len();
        let mut f = vec![0.0; m];
        self.features(x, &mut f);
        let g: Vec<f64> = self.partials.iter().map(|p| p.eval(&f)).collect();
        x.iter()
            .map(|&xi| {
                let d: f64 = g.iter().zip(&self.profiles).map(|(gj, p)| gj * p.derivative(xi)).sum();
                d * d
            })
            .sum()
    }

    fn feature_box(&self, k: usize) -> Vec<(f64, f64)> {
        self.profiles
            .iter()
            .map(|p| {
                let (lo, hi) = p.range();
                (k as f64 * lo.min(0.0), k as f64 * hi.max(0.0))
            })
            .collect()
    }

    /// Enclosure of `u` over all `k`-point configurations in the window.
    pub fn bounds(&self, k: usize) -> (f64, f64) {
        self.outer.bounds(&self.feature_box(k))
    }

    /// Declared Lipschitz constant with respect to the matching distance on
    /// the `k`-point sector: `√k Σ_j sup|∂_jF| · sup|φ_j'|`.
    pub fn lipschitz(&self, k: usize) -> f64 {
        let dom = self.feature_box(k);
        let s: f64 = self
            .partials
            .iter()
            .zip(&self.profiles)
            .map(|(p, prof)| {
                let (lo, hi) = p.bounds(&dom);
                lo.abs().max(hi.abs()) * prof.lipschitz()
            })
            .sum();
        (k as f64).sqrt() * s
    }
}

/// Closed-form square field `Γ(u)(γ)`.
pub fn carre_du_champ(u: &CylinderFunction, gamma: &Configuration) -> f64 {
    u.carre_du_champ(gamma.points())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabOptions {
    pub dt: f64,
    /// Finite-difference step relative to `r`.
    pub eps_rel: f64,
    pub z_crit: f64,
    pub substep_cap: u32,
    pub max_projection_fraction: f64,
    /// Replicas used for the Richardson bias check of the gradient.
    pub richardson_replicas: usize,
    /// Reports are inconclusive when the pooled stderr exceeds this fraction
    /// of the right-hand side.
    pub inconclusive_fraction: f64,
}

impl Default for LabOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            eps_rel: 1e-4,
            z_crit: 3.0,
            substep_cap: 10,
            max_projection_fraction: 0.01,
            richardson_replicas: 20_000,
            inconclusive_fraction: 0.2,
        }
    }
}

impl LabOptions {
    fn sde(&self, t: f64, seed: u64) -> SdeConfig {
        SdeConfig {
            dt: self.dt.min(t.max(f64::MIN_POSITIVE)),
            t_final: t,
            substep_cap: self.substep_cap,
            seed,
            record_stride: 1,
            max_projection_fraction: self.max_projection_fraction,
        }
    }
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub inequality: String,
    pub function: String,
    pub t: f64,
    #[serde(rename = "K")]
    pub curvature: f64,
    pub left: f64,
    pub left_stderr: f64,
    pub right: f64,
    pub right_stderr: f64,
    /// `right − left`.
    pub margin: f64,
    pub pooled_stderr: f64,
    pub z: f64,
    pub z_crit: f64,
    pub pass: bool,
    pub inconclusive: bool,
    pub n_samples: usize,
    pub seed: u64,
    /// Inequality-specific diagnostics (constants, worst pair, …).
    pub extra: BTreeMap<String, f64>,
}

/// Upper bound for reports whose right side is infinite, so they stay valid
/// JSON.
const HUGE: f64 = f64::MAX;

#[derive(Clone, Debug)]
struct Side {
    value: f64,
    /// Per-replica influence values (mean zero is not required).
    influence: Vec<f64>,
}

impl Side {
    fn exact(value: f64) -> Self {
        Self { value, influence: Vec::new() }
    }

    fn stderr(&self) -> f64 {
        if self.influence.len() < 2 {
            0.0
        } else {
            stats::variance(&self.influence).sqrt() / (self.influence.len() as f64).sqrt()
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn make_report(
    inequality: &str,
    function: &str,
    t: f64,
    k_curv: f64,
    left: Side,
    right: Side,
    opts: &LabOptions,
    n: usize,
    seed: u64,
    extra: BTreeMap<String, f64>,
) -> VerificationReport {
    let margin = right.value - left.value;
    let pooled = match (left.influence.len(), right.influence.len()) {
        (0, 0) => 0.0,
        (a, 0) if a > 0 => left.stderr(),
        (0, b) if b > 0 => right.stderr(),
        (a, b) if a == b => {
            let diff: Vec<f64> = right.influence.iter().zip(&left.influence).map(|(r, l)| r - l).collect();
            stats::variance(&diff).sqrt() / (a as f64).sqrt()
        }
        _ => left.stderr().hypot(right.stderr()),
    };
    let z = if pooled > 0.0 {
        margin / pooled
    } else if margin >= 0.0 {
        f64::MAX
    } else {
        f64::MIN
    };
    let margin_tol = 1e-12 * right.value.abs().max(left.value.abs()).min(1e300);
    VerificationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        inequality: inequality.to_string(),
        function: function.to_string(),
        t,
        curvature: k_curv,
        left: left.value,
        left_stderr: left.stderr(),
        right: right.value.min(HUGE),
        right_stderr: right.stderr(),
        margin: margin.min(HUGE),
        pooled_stderr: pooled,
        z: z.clamp(f64::MIN, f64::MAX),
        z_crit: opts.z_crit,
        pass: margin >= -opts.z_crit * pooled - margin_tol,
        inconclusive: pooled > opts.inconclusive_fraction * right.value.abs(),
        n_samples: n,
        seed,
        extra,
    }
}

/// Right-hand constant of the upper local Poincaré inequality.
pub fn poincare_upper_factor(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        t
    } else {
        -(-2.0 * k * t).exp_m1() / (2.0 * k)
    }
}

/// Left-hand constant of the reverse local Poincaré inequality.
pub fn poincare_lower_factor(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        t
    } else {
        (2.0 * k * t).exp_m1() / (2.0 * k)
    }
}

/// `c(K,t)` with `T_t log f(γ) ≤ log T_t f(η) + c·d̄²`.
pub fn log_harnack_factor(k: f64, t: f64) -> f64 {
    if t == 0.0 {
        return f64::INFINITY;
    }
    if k == 0.0 {
        1.0 / (2.0 * t)
    } else {
        k / -(-2.0 * k * t).exp_m1()
    }
}

/// `c(α,K,t)` with `(T_t f)^α(γ) ≤ T_t f^α(η) · exp(c·d̄²)`.
pub fn harnack_factor(alpha: f64, k: f64, t: f64) -> f64 {
    alpha / (alpha - 1.0) * log_harnack_factor(k, t)
}

/// Largest `s` for which `T_t e^{s u}` is finite for 1-Lipschitz `u`.
pub fn exp_moment_threshold(k: f64, t: f64) -> f64 {
    (4.0 * log_harnack_factor(k, t)).sqrt()
}

/// Shared coupled ensemble for a verification cell.
///
/// Every replica runs the group of starts
/// `[γ, γ+εe_1, …, γ+εe_k, η?, a_1, b_1, a_2, b_2, …]` with one Brownian path
/// and records, for each function and time, `u` at every start and `Γ(u)` at
/// the first.
pub struct CellEnsemble {
    pub gamma: Configuration,
    pub eta: Option<Configuration>,
    pub pairs: Vec<(Configuration, Configuration)>,
    pub functions: Vec<CylinderFunction>,
    pub times: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub eps: f64,
    pub opts: LabOptions,
    k: usize,
    slots: usize,
    /// `[replica][time][function][slot]`, flat.
    data: Vec<f64>,
}

impl CellEnsemble {
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        pot: &ConditionalPotential,
        gamma: &Configuration,
        eta: Option<&Configuration>,
        pairs: &[(Configuration, Configuration)],
        functions: &[CylinderFunction],
        times: &[f64],
        n: usize,
        seed: u64,
        opts: &LabOptions,
    ) -> Result<Self> {
        let k = gamma.count();
        let r = pot.r();
        let eps = opts.eps_rel * r;
        if times.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::InvalidParameter("times must be nonnegative".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one replica".into()));
        }
        let mut starts = vec![gamma.clone()];
        starts.extend(shifted_starts(gamma, eps, r)?);
        if let Some(eta) = eta {
            if !bar_distance(gamma, eta, r).is_finite() {
                return Err(Error::InfiniteDistance);
            }
            starts.push(eta.clone());
        }
        for (a, b) in pairs {
            if !bar_distance(a, b, r).is_finite() {
                return Err(Error::InfiniteDistance);
            }
            starts.push(a.clone());
            starts.push(b.clone());
        }
        let m = starts.len();
        // u at each start, then Γ(u) at γ
        let slots = m + 1;
        let t_max = times.iter().copied().fold(0.0, f64::max);
        let cfg = opts.sde(t_max, seed);
        let per = simulate_replicas(&starts, pot, &cfg, times, n, |_, xs| {
            let mut out = Vec::with_capacity(functions.len() * slots);
            for f in functions {
                for s in xs.chunks_exact(k.max(1)).take(m) {
                    out.push(f.value(s));
                }
                out.push(f.carre_du_champ(&xs[..k]));
            }
            out
        })?;
        let data = per.into_iter().flatten().collect();
        Ok(Self {
            gamma: gamma.clone(),
            eta: eta.cloned(),
            pairs: pairs.to_vec(),
            functions: functions.to_vec(),
            times: times.to_vec(),
            n,
            seed,
            eps,
            opts: opts.clone(),
            k,
            slots,
            data,
        })
    }

    fn column(&self, ti: usize, fi: usize, slot: usize) -> Vec<f64> {
        let nf = self.functions.len();
        let stride = self.times.len() * nf * self.slots;
        let off = (ti * nf + fi) * self.slots + slot;
        (0..self.n).map(|j| self.data[j * stride + off]).collect()
    }

    fn u_gamma(&self, ti: usize, fi: usize) -> Vec<f64> {
        self.column(ti, fi, 0)
    }

    fn gamma_field(&self, ti: usize, fi: usize) -> Vec<f64> {
        self.column(ti, fi, self.slots - 1)
    }

    fn eta_slot(&self) -> Option<usize> {
        self.eta.as_ref().map(|_| 1 + self.k)
    }

    fn pair_slots(&self, p: usize) -> (usize, usize) {
        let base = 1 + self.k + usize::from(self.eta.is_some()) + 2 * p;
        (base, base + 1)
    }

    /// Forward differences `D_i = (u(X^{γ+εe_i}) − u(X^γ))/ε`, per replica.
    fn differences(&self, ti: usize, fi: usize) -> Vec<Vec<f64>> {
        let base = self.u_gamma(ti, fi);
        (0..self.k)
            .map(|i| {
                self.column(ti, fi, 1 + i)
                    .iter()
                    .zip(&base)
                    .map(|(a, b)| (a - b) / self.eps)
                    .collect()
            })
            .collect()
    }

    /// Unbiased estimate of `Γ(T_t u)(γ) = Σ_i (∂_i T_t u)²` with influence
    /// `Σ_i 2 m_i D_i`.
    fn gradient_side(&self, ti: usize, fi: usize) -> Side {
        let d = self.differences(ti, fi);
        let n = self.n as f64;
        let means: Vec<f64> = d.iter().map(|c| c.iter().sum::<f64>() / n).collect();
        let bias: f64 = if self.n > 1 { d.iter().map(|c| stats::variance(c) / n).sum() } else { 0.0 };
        let value = (means.iter().map(|m| m * m).sum::<f64>() - bias).max(0.0);
        let influence = (0..self.n).map(|j| 2.0 * d.iter().zip(&means).map(|(c, m)| m * c[j]).sum::<f64>()).collect();
        Side { value, influence }
    }

    fn mean_side(values: Vec<f64>) -> Side {
        let value = values.iter().sum::<f64>() / values.len() as f64;
        Side { value, influence: values }
    }

    fn function(&self, fi: usize) -> &CylinderFunction {
        &self.functions[fi]
    }

    fn extra(&self, pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        let mut m: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        m.insert("k".into(), self.k as f64);
        m
    }

    pub fn semigroup(&self, ti: usize, fi: usize) -> (f64, f64) {
        if self.times[ti] == 0.0 {
            return (self.function(fi).value(self.gamma.points()), 0.0);
        }
        stats::mean_stderr(&self.u_gamma(ti, fi))
    }

    pub fn be_report(&self, ti: usize, fi: usize, k_curv: f64) -> VerificationReport {
        let t = self.times[ti];
        let f = self.function(fi);
        let (left, right) = if t == 0.0 {
            let g = f.carre_du_champ(self.gamma.points());
            (Side::exact(g), Side::exact(g))
        } else {
            let decay = (-2.0 * k_curv * t).exp();
            let g = self.gamma_field(ti, fi).into_iter().map(|v| decay * v).collect();
            (self.gradient_side(ti, fi), Self::mean_side(g))
        };
        make_report("bakry_emery", &f.name, t, k_curv, left, right, &self.opts, self.n, self.seed, self.extra(&[("eps", self.eps)]))
    }

    /// `[upper, lower]` local Poincaré reports.
    pub fn poincare_reports(&self, ti: usize, fi: usize, k_curv: f64) -> [VerificationReport; 2] {
        let t = self.times[ti];
        let f = self.function(fi);
        let name = f.name.clone();
        let extra = self.extra(&[
            ("upper_factor", poincare_upper_factor(k_curv, t)),
            ("lower_factor", poincare_lower_factor(k_curv, t)),
        ]);
        if t == 0.0 {
            let zero = || Side::exact(0.0);
            return [
                make_report("poincare_upper", &name, t, k_curv, zero(), zero(), &self.opts, self.n, self.seed, extra.clone()),
                make_report("poincare_lower", &name, t, k_curv, zero(), zero(), &self.opts, self.n, self.seed, extra),
            ];
        }
        let u = self.u_gamma(ti, fi);
        let n = u.len() as f64;
        let mean = u.iter().sum::<f64>() / n;
        let var = stats::variance(&u);
        let sq: Vec<f64> = u.iter().map(|v| (v - mean) * (v - mean)).collect();
        let variance = Side { value: var, influence: sq };
        let cu = poincare_upper_factor(k_curv, t);
        let cl = poincare_lower_factor(k_curv, t);
        let upper_right = Self::mean_side(self.gamma_field(ti, fi).into_iter().map(|g| cu * g).collect());
        let grad = self.gradient_side(ti, fi);
        let lower_left = Side { value: cl * grad.value, influence: grad.influence.iter().map(|v| cl * v).collect() };
        [
            make_report("poincare_upper", &name, t, k_curv, variance.clone(), upper_right, &self.opts, self.n, self.seed, extra.clone()),
            make_report("poincare_lower", &name, t, k_curv, lower_left, variance, &self.opts, self.n, self.seed, extra),
        ]
    }

    /// Harnack check for the nonnegative shift `v = u − inf u`.
    pub fn harnack_report(&self, ti: usize, fi: usize, alpha: f64, k_curv: f64) -> Result<VerificationReport> {
        let eta = self.eta.as_ref().ok_or_else(|| Error::InvalidParameter("cell has no η".into()))?;
        if !(alpha > 1.0) {
            return Err(Error::InvalidParameter(format!("α must exceed 1, got {alpha}")));
        }
        let t = self.times[ti];
        let f = self.function(fi);
        let lo = f.bounds(self.k).0;
        let d = bar_distance(&self.gamma, eta, self.r_hint());
        let c = harnack_factor(alpha, k_curv, t);
        let expo = if d == 0.0 { 0.0 } else { c * d * d };
        let weight = expo.exp();
        let extra = self.extra(&[("alpha", alpha), ("distance", d), ("exponent_factor", c), ("shift", lo)]);
        let (left, right) = if t == 0.0 {
            let vg = f.value(self.gamma.points()) - lo;
            let ve = f.value(eta.points()) - lo;
            (Side::exact(vg.powf(alpha)), Side::exact(weight * ve.powf(alpha)))
        } else {
            let vg: Vec<f64> = self.u_gamma(ti, fi).iter().map(|u| (u - lo).max(0.0)).collect();
            let ve: Vec<f64> = self.column(ti, fi, self.eta_slot().unwrap()).iter().map(|u| (u - lo).max(0.0)).collect();
            let mg = vg.iter().sum::<f64>() / vg.len() as f64;
            let left = Side {
                value: mg.powf(alpha),
                influence: vg.iter().map(|v| alpha * mg.powf(alpha - 1.0) * v).collect(),
            };
            let right = Self::mean_side(ve.iter().map(|v| weight * v.powf(alpha)).collect());
            (left, right)
        };
        Ok(make_report("harnack", &f.name, t, k_curv, left, right, &self.opts, self.n, self.seed, extra))
    }

    /// Log-Harnack check for `v = u − inf u` regularised by `ε_log`.
    pub fn log_harnack_report(&self, ti: usize, fi: usize, eps_log: f64, k_curv: f64) -> Result<VerificationReport> {
        let eta = self.eta.as_ref().ok_or_else(|| Error::InvalidParameter("cell has no η".into()))?;
        if !(eps_log > 0.0 && eps_log <= 1.0) {
            return Err(Error::InvalidParameter(format!("ε must lie in (0, 1], got {eps_log}")));
        }
        let t = self.times[ti];
        let f = self.function(fi);
        let lo = f.bounds(self.k).0;
        let d = bar_distance(&self.gamma, eta, self.r_hint());
        let c = log_harnack_factor(k_curv, t);
        let cost = if d == 0.0 { 0.0 } else { c * d * d };
        let extra = self.extra(&[("epsilon", eps_log), ("distance", d), ("cost_factor", c), ("shift", lo)]);
        let (left, right) = if t == 0.0 {
            let vg = f.value(self.gamma.points()) - lo;
            let ve = f.value(eta.points()) - lo;
            (Side::exact((vg + eps_log).ln()), Side::exact((ve + eps_log).ln() + cost))
        } else {
            let vg: Vec<f64> = self.u_gamma(ti, fi).iter().map(|u| (u - lo).max(0.0)).collect();
            let ve: Vec<f64> = self.column(ti, fi, self.eta_slot().unwrap()).iter().map(|u| (u - lo).max(0.0)).collect();
            let me = ve.iter().sum::<f64>() / ve.len() as f64;
            let left = Self::mean_side(vg.iter().map(|v| (v + eps_log).ln()).collect());
            let right = Side {
                value: (me + eps_log).ln() + cost,
                influence: ve.iter().map(|v| v / (me + eps_log)).collect(),
            };
            (left, right)
        };
        Ok(make_report("log_harnack", &f.name, t, k_curv, left, right, &self.opts, self.n, self.seed, extra))
    }

    /// Lipschitz contraction over the cell's pairs; returns the report of the
    /// pair closest to failing.
    pub fn lipschitz_report(&self, ti: usize, fi: usize, k_curv: f64) -> Result<VerificationReport> {
        if self.pairs.is_empty() {
            return Err(Error::InvalidParameter("cell has no Lipschitz pairs".into()));
        }
        let t = self.times[ti];
        let f = self.function(fi);
        let lu = f.lipschitz(self.k);
        let contraction = (-k_curv * t).exp();
        let mut worst: Option<(f64, VerificationReport)> = None;
        for (p, (a, b)) in self.pairs.iter().enumerate() {
            let d = bar_distance(a, b, self.r_hint());
            let right = Side::exact(contraction * lu * d);
            let left = if t == 0.0 {
                Side::exact((f.value(a.points()) - f.value(b.points())).abs())
            } else {
                let (sa, sb) = self.pair_slots(p);
                let diff: Vec<f64> =
                    self.column(ti, fi, sa).iter().zip(self.column(ti, fi, sb)).map(|(x, y)| x - y).collect();
                let m = diff.iter().sum::<f64>() / diff.len() as f64;
                let sign = if m >= 0.0 { 1.0 } else { -1.0 };
                Side { value: m.abs(), influence: diff.iter().map(|v| sign * v).collect() }
            };
            let extra = self.extra(&[("lipschitz_bound", lu), ("distance", d), ("pair", p as f64)]);
            let rep = make_report("lipschitz", &f.name, t, k_curv, left, right, &self.opts, self.n, self.seed, extra);
            let slack = rep.margin + rep.z_crit * rep.pooled_stderr;
            if worst.as_ref().is_none_or(|(s, _)| slack < *s) {
                worst = Some((slack, rep));
            }
        }
        Ok(worst.unwrap().1)
    }

    /// Stability of `T_t e^{s ũ}` with `ũ = u/L_u` (1-Lipschitz) along the
    /// prefixes `N/4, N/2, N`.
    pub fn exp_moment_report(&self, ti: usize, fi: usize, s: f64, k_curv: f64) -> VerificationReport {
        let t = self.times[ti];
        let f = self.function(fi);
        let lu = f.lipschitz(self.k).max(f64::MIN_POSITIVE);
        let threshold = exp_moment_threshold(k_curv, t);
        let mut extra = self.extra(&[("s", s), ("threshold", threshold.min(HUGE)), ("lipschitz_bound", lu)]);
        if t == 0.0 || s == 0.0 {
            let e = (s * f.value(self.gamma.points()) / lu).exp();
            let e = if t == 0.0 { e } else { 1.0 };
            extra.insert("estimate".into(), e);
            return make_report("exp_moment", &f.name, t, k_curv, Side::exact(0.0), Side::exact(0.1), &self.opts, self.n, self.seed, extra);
        }
        let su: Vec<f64> = self.u_gamma(ti, fi).iter().map(|u| s * u / lu).collect();
        let est = exp_moment_prefixes(&su);
        let drift = (est[2] / est[1] - 1.0).abs();
        let monotone = (est[0] < est[1] && est[1] < est[2]) || (est[0] > est[1] && est[1] > est[2]);
        let drift_far = (est[2] / est[0] - 1.0).abs();
        let diverging = monotone && drift_far > 0.1;
        // stderr of the full-N estimate relative to its value
        let shift = su.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = su.iter().map(|v| (v - shift).exp()).collect();
        let (mw, sw) = stats::mean_stderr(&w);
        let rel_se = if mw > 0.0 { sw / mw } else { f64::INFINITY };
        extra.insert("estimate".into(), est[2]);
        extra.insert("estimate_half".into(), est[1]);
        extra.insert("estimate_quarter".into(), est[0]);
        extra.insert("relative_stderr".into(), rel_se);
        extra.insert("diverging".into(), f64::from(u8::from(diverging)));
        let left = Side::exact(if diverging { drift_far } else { drift });
        let mut rep = make_report("exp_moment", &f.name, t, k_curv, left, Side::exact(0.1), &self.opts, self.n, self.seed, extra);
        rep.pooled_stderr = rel_se * std::f64::consts::SQRT_2;
        rep.z = if rep.pooled_stderr > 0.0 { rep.margin / rep.pooled_stderr } else { f64::MAX };
        rep.pass = !diverging && rep.margin >= -rep.z_crit * rep.pooled_stderr;
        rep.inconclusive = rel_se > 0.1;
        rep
    }

    fn r_hint(&self) -> f64 {
        // every start lies in the window, so any radius covering it works
        let m = |c: &Configuration| c.points().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut r = m(&self.gamma);
        if let Some(e) = &self.eta {
            r = r.max(m(e));
        }
        for (a, b) in &self.pairs {
            r = r.max(m(a)).max(m(b));
        }
        r
    }
}

/// Mean of `e^{x}` on the prefixes `N/4`, `N/2`, `N`, via log-sum-exp.
fn exp_moment_prefixes(x: &[f64]) -> [f64; 3] {
    let n = x.len();
    let at = |m: usize| {
        let m = m.max(1).min(n);
        (stats::log_sum_exp(&x[..m]) - (m as f64).ln()).exp()
    };
    [at(n / 4), at(n / 2), at(n)]
}

fn shifted_starts(gamma: &Configuration, eps: f64, r: f64) -> Result<Vec<Configuration>> {
    let x = gamma.points();
    (0..x.len())
        .map(|i| {
            let mut y = x.to_vec();
            y[i] += eps;
            let next = x.get(i + 1).copied().unwrap_or(f64::INFINITY);
            if y[i] > r || y[i] >= next {
                return Err(Error::InvalidParameter(format!(
                    "finite-difference step {eps} leaves the ordered window at particle {i}"
                )));
            }
            Ok(Configuration::new(y))
        })
        .collect()
}

/// `T_t u(γ)` as `(mean, stderr)` over `n` independent replicas.
pub fn semigroup_estimate(
    u: &CylinderFunction,
    gamma: &Configuration,
    t: f64,
    pot: &ConditionalPotential,
    n: usize,
    seed: u64,
    opts: &LabOptions,
) -> Result<(f64, f64)> {
    if t == 0.0 {
        return Ok((u.value(gamma.points()), 0.0));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one replica".into()));
    }
    let vals = simulate_replicas(std::slice::from_ref(gamma), pot, &opts.sde(t, seed), &[t], n, |_, x| u.value(x))?;
    Ok(stats::mean_stderr(&vals))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    /// Unbiased estimate of `Γ(T_t u)(γ)`.
    pub value: f64,
    pub stderr: f64,
    /// `∂̂_i T_t u(γ)`.
    pub partials: Vec<f64>,
    /// Richardson estimate of the finite-difference bias of `value`.
    pub bias: f64,
    pub bias_warning: bool,
}

/// `Γ(T_t u)(γ)` from synchronously coupled forward differences.
pub fn gradient_semigroup(
    u: &CylinderFunction,
    gamma: &Configuration,
    t: f64,
    pot: &ConditionalPotential,
    n: usize,
    eps: f64,
    seed: u64,
    opts: &LabOptions,
) -> Result<GradientEstimate> {
    let mut o = opts.clone();
    o.eps_rel = eps / pot.r();
    let cell = CellEnsemble::run(pot, gamma, None, &[], std::slice::from_ref(u), &[t], n, seed, &o)?;
    let side = cell.gradient_side(0, 0);
    let partials: Vec<f64> = cell.differences(0, 0).iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let stderr = if t == 0.0 { 0.0 } else { side.stderr() };
    // Richardson: the bias of the ε-difference is about D_{2ε} − D_ε
    let nr = opts.richardson_replicas.min(n).max(1);
    let mut o2 = o.clone();
    o2.eps_rel = 2.0 * o.eps_rel;
    let coarse = CellEnsemble::run(pot, gamma, None, &[], std::slice::from_ref(u), &[t], nr, seed, &o2)?;
    let fine = if nr == n { side.value } else {
        CellEnsemble::run(pot, gamma, None, &[], std::slice::from_ref(u), &[t], nr, seed, &o)?.gradient_side(0, 0).value
    };
    let bias = coarse.gradient_side(0, 0).value - fine;
    Ok(GradientEstimate { value: side.value, stderr, partials, bias, bias_warning: bias.abs() > stderr })
}

pub fn verify_be(
    u: &CylinderFunction,
    gamma: &Configuration,
    t: f64,
    pot: &ConditionalPotential,
    k_curv: f64,
    n: usize,
    seed: u64,
    opts: &LabOptions,
) -> Result<VerificationReport> {
    let cell = CellEnsemble::run(pot, gamma, None, &[], std::slice::from_ref(u), &[t], n, seed, opts)?;
    Ok(cell.be_report(0, 0, k_curv))
}

pub fn verify_poincare(
    u: &CylinderFunction,
    gamma: &Configuration,
    t: f64,
    pot: &ConditionalPotential,
    k_curv: f64,
    n: usize,
    seed: u64,
    opts: &LabOptions,
) -> Result<[VerificationReport; 2]> {
    let cell = CellEnsemble::run(pot, gamma, None, &[], std::slice::from_ref(u), &[t], n, seed, opts)?;
    Ok(cell.poincare_reports(0, 0, k_curv))
}

#[allow(clippy::too_many_arguments)]
pub fn verify_harnack(
    u: &CylinderFunction,
    gamma: &Configuration,
    eta: &Configuration,
    t: f64,
    alpha: f64,
    pot: &ConditionalPotential,
    k_curv: f64,
    n: usize,
    seed: u64,
    opts: &LabOptions,
) -> Result<VerificationReport> {
    let cell = CellEnsemble::run(pot, gamma, Some(eta), &[], std::slice::from_ref(u), &[t], n, seed, opts)?;
    cell.harnack_report(0, 0, alpha, k_curv)
}

#[allow(clippy::too_many_arguments)]
pub fn verify_log_harnack(
    u: &CylinderFunction,
    gamma: &Configuration,
    eta: &Configuration,
    t: f64,
    eps_log: f64,
    pot: &ConditionalPotential,
    k_curv: f64,
    n: usize,
    seed: u64,
    opts: &LabOptions,
) -> Result<VerificationReport> {
    let cell = CellEnsemble::run(pot, gamma, Some(eta), &[], std::slice::from_ref(u), &[t], n, seed, opts)?;
    cell.log_harnack_report(0, 0, eps_log, k_curv)
}

#[allow(clippy::too_many_arguments)]
pub fn verify_lipschitz_contraction(
    u: &CylinderFunction,
    pairs: &[(Configuration, Configuration)],
    t: f64,
    pot: &ConditionalPotential,
    k_curv: f64,
    n: usize,
    seed: u64,
    opts: &LabOptions,
) -> Result<VerificationReport> {
    let (a, _) = pairs.first().ok_or_else(|| Error::InvalidParameter("no pairs given".into()))?;
    let cell = CellEnsemble::run(pot, a, None, pairs, std::slice::from_ref(u), &[t], n, seed, opts)?;
    cell.lipschitz_report(0, 0, k_curv)
}

#[allow(clippy::too_many_arguments)]
pub fn exp_moment(
    u: &CylinderFunction,
    gamma: &Configuration,
    t: f64,
    s: f64,
    pot: &ConditionalPotential,
    k_curv: f64,
    n: usize,
    seed: u64,
    opts: &LabOptions,
) -> Result<VerificationReport> {
    let cell = CellEnsemble::run(pot, gamma, None, &[], std::slice::from_ref(u), &[t], n, seed, opts)?;
    Ok(cell.exp_moment_report(0, 0, s, k_curv))
}
