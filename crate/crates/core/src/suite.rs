//! Verification cells: a conditional potential built from a CβE exterior,
//! starting configurations drawn from the conditional sampler, and the
//! standard test-function library.
//!
//! Lipschitz bounds of the library functions are analytic: for
//! `u = F(⟨φ_1,γ⟩, …, ⟨φ_m,γ⟩)` on the `k`-point sector,
//! `|u(γ) − u(η)| ≤ Σ_j sup|∂_jF| · Lip(φ_j) · Σ_x |x − y|
//!               ≤ √k · Σ_j sup|∂_jF| · Lip(φ_j) · d̄(γ, η)`
//! (Cauchy–Schwarz over the optimal matching), see
//! [`CylinderFunction::lipschitz`].

use serde::{Deserialize, Serialize};

use crate::config_space::Configuration;
use crate::error::{Error, Result};
use crate::expr::{var, Profile};
use crate::gibbs::{cbe_exterior, sample_conditional, SamplerConfig, Scheme};
use crate::potentials::{ConditionalPotential, InteractionKind};
use crate::rng;
use crate::semigroup::{CellEnsemble, CylinderFunction, LabOptions, VerificationReport};

/// Points in the CβE draw that supplies the exterior.
pub const EXTERIOR_POINTS: usize = 64;
pub const EXTERIOR_CUTOFF: f64 = 30.0;
/// Minimal clearance of starts from each other and from the walls.
const CLEARANCE: f64 = 0.05;
/// Size of the one-point shift between γ and η.
pub const ETA_SHIFT: f64 = 0.3;

/// Window radius for a `k`-point sector: about one unit of spacing per point.
pub fn window_for(k: usize) -> f64 {
    (k as f64 / 2.0).max(1.0)
}

/// The three cylinder functions of the verification suite on `[-r, r]`.
pub fn standard_functions(r: f64) -> Result<Vec<CylinderFunction>> {
    Ok(vec![
        CylinderFunction::linear("bump_linear", Profile::Bump { r })?,
        CylinderFunction::new("tanh_sine", var(0).tanh(), vec![Profile::SineWindow { r, m: 1 }])?,
        CylinderFunction::new(
            "poly_bump_product",
            var(0).mul(var(1)),
            vec![Profile::PolyWindow { r, p: 2 }, Profile::Bump { r }],
        )?,
    ])
}

/// `u(γ) = Σ_x x`: `Γ(u) = k`, and far from the walls `T_t u` moves rigidly.
pub fn linear_statistic(r: f64) -> Result<CylinderFunction> {
    CylinderFunction::linear("linear", Profile::Linear { r })
}

/// Names accepted by [`function_by_name`].
pub const FUNCTION_NAMES: [&str; 4] = ["bump_linear", "tanh_sine", "poly_bump_product", "linear"];

/// A library function by name.
pub fn function_by_name(name: &str, r: f64) -> Result<CylinderFunction> {
    if name == "linear" {
        return linear_statistic(r);
    }
    standard_functions(r)?
        .into_iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown test function `{name}` (known: {})", FUNCTION_NAMES.join(", "))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub kind: InteractionKind,
    pub k: usize,
    /// Window radius; defaults to [`window_for`].
    #[serde(default)]
    pub r: Option<f64>,
    /// Number of `(γ, η)` pairs for the Lipschitz check.
    #[serde(default = "default_pairs")]
    pub lipschitz_pairs: usize,
    /// Build the cell without an exterior (free reflected gas).
    #[serde(default)]
    pub free: bool,
}

fn default_pairs() -> usize {
    4
}

impl CellSpec {
    pub fn new(kind: InteractionKind, k: usize) -> Self {
        Self { kind, k, r: None, lipschitz_pairs: default_pairs(), free: false }
    }

    pub fn radius(&self) -> f64 {
        self.r.unwrap_or_else(|| window_for(self.k))
    }

    pub fn label(&self) -> String {
        let kind = match self.kind {
            InteractionKind::DysonLog { beta } => format!("dyson_b{beta}"),
            InteractionKind::Riesz { beta, s } => format!("riesz_b{beta}_s{s}"),
        };
        format!("{kind}_k{}{}", self.k, if self.free { "_free" } else { "" })
    }
}

#[derive(Clone, Debug)]
pub struct CellSetup {
    pub spec: CellSpec,
    pub pot: ConditionalPotential,
    pub gamma: Configuration,
    pub eta: Configuration,
    pub pairs: Vec<(Configuration, Configuration)>,
}

fn has_clearance(x: &[f64], r: f64) -> bool {
    x.first().is_some_and(|a| *a >= -r + CLEARANCE)
        && x.last().is_some_and(|b| *b <= r - CLEARANCE)
        && x.windows(2).all(|w| w[1] - w[0] >= CLEARANCE)
}

/// `γ` with one point moved by `±ETA_SHIFT`, keeping clearance.
fn shifted(gamma: &Configuration, r: f64) -> Option<Configuration> {
    for i in 0..gamma.count() {
        for sign in [1.0, -1.0] {
            let mut y = gamma.points().to_vec();
            y[i] += sign * ETA_SHIFT;
            if has_clearance(&y, r) {
                return Some(Configuration::new(y));
            }
        }
    }
    None
}

/// Conditional potential of a cell: `k` points in `[-r, r]` with the exterior
/// cut from a CβE draw, or no exterior when `free`.
pub fn cell_potential(kind: InteractionKind, k: usize, r: f64, free: bool, seed: u64) -> Result<ConditionalPotential> {
    kind.validate()?;
    if free {
        ConditionalPotential::free(kind, r)
    } else {
        let (ext, _) = cbe_exterior(EXTERIOR_POINTS, kind.beta(), k, r, EXTERIOR_CUTOFF, seed)?;
        ConditionalPotential::new(kind, ext)
    }
}

/// The starts of a cell.
#[derive(Clone, Debug)]
pub struct Starts {
    pub gamma: Configuration,
    pub eta: Configuration,
    pub pairs: Vec<(Configuration, Configuration)>,
}

/// Draws `γ`, its one-point shift `η` and `pairs` Lipschitz pairs from the
/// conditional sampler. With `lattice`, `γ` is the centred unit lattice
/// instead, far from the walls, so that the reflection does not enter at
/// short times.
pub fn draw_starts(pot: &ConditionalPotential, k: usize, pairs: usize, lattice: bool, seed: u64) -> Result<Starts> {
    let r = pot.r();
    let draws = 64 + 2 * pairs;
    let mut cfg = SamplerConfig::new(k, draws, Scheme::Metropolis, seed);
    cfg.thinning = 20;
    let (samples, _) = sample_conditional(pot, &cfg)?;
    let lattice = lattice
        .then(|| Configuration::new((0..k).map(|i| i as f64 - 0.5 * (k as f64 - 1.0)).collect::<Vec<f64>>()));
    let (gamma, eta) = lattice
        .iter()
        .chain(samples.iter().filter(|g| has_clearance(g.points(), r)))
        .find_map(|g| shifted(g, r).map(|e| (g.clone(), e)))
        .ok_or_else(|| Error::InvalidParameter("no start leaves room for the η shift".into()))?;
    let tail = &samples[samples.len() - 2 * pairs..];
    let pairs = tail.chunks_exact(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    Ok(Starts { gamma, eta, pairs })
}

/// Builds the potential and draws the starts of a cell from `seed`.
pub fn setup_cell(spec: &CellSpec, seed: u64) -> Result<CellSetup> {
    let pot = cell_potential(spec.kind, spec.k, spec.radius(), spec.free, rng::child_seed(seed, 0))?;
    let Starts { gamma, eta, pairs } =
        draw_starts(&pot, spec.k, spec.lipschitz_pairs, spec.free, rng::child_seed(seed, 1))?;
    Ok(CellSetup { spec: spec.clone(), pot, gamma, eta, pairs })
}

/// Inequality parameters shared by all reports of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckParams {
    #[serde(rename = "K", default)]
    pub curvature: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_eps_log")]
    pub log_epsilon: f64,
    #[serde(default = "default_s")]
    pub exp_s: f64,
}

fn default_alpha() -> f64 {
    2.0
}
fn default_eps_log() -> f64 {
    0.5
}
fn default_s() -> f64 {
    1.5
}

impl Default for CheckParams {
    fn default() -> Self {
        Self { curvature: 0.0, alpha: default_alpha(), log_epsilon: default_eps_log(), exp_s: default_s() }
    }
}

/// Runs the shared ensemble of a cell.
pub fn run_cell(
    setup: &CellSetup,
    functions: &[CylinderFunction],
    times: &[f64],
    n: usize,
    seed: u64,
    opts: &LabOptions,
) -> Result<CellEnsemble> {
    CellEnsemble::run(&setup.pot, &setup.gamma, Some(&setup.eta), &setup.pairs, functions, times, n, seed, opts)
}

/// Which inequalities to report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Inequality {
    Be,
    Poincare,
    Harnack,
    LogHarnack,
    Lipschitz,
    Expmoment,
}

impl Inequality {
    pub const ALL: [Inequality; 6] = [
        Inequality::Be,
        Inequality::Poincare,
        Inequality::Harnack,
        Inequality::LogHarnack,
        Inequality::Lipschitz,
        Inequality::Expmoment,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.as_str() == s)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Inequality::Be => "be",
            Inequality::Poincare => "poincare",
            Inequality::Harnack => "harnack",
            Inequality::LogHarnack => "log-harnack",
            Inequality::Lipschitz => "lipschitz",
            Inequality::Expmoment => "expmoment",
        }
    }
}

/// Reports of the selected inequalities for every time and function.
pub fn cell_reports(cell: &CellEnsemble, which: &[Inequality], params: &CheckParams) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::new();
    for ti in 0..cell.times.len() {
        for fi in 0..cell.functions.len() {
            for w in which {
                match w {
                    Inequality::Be => out.push(cell.be_report(ti, fi, params.curvature)),
                    Inequality::Poincare => out.extend(cell.poincare_reports(ti, fi, params.curvature)),
                    Inequality::Harnack => out.push(cell.harnack_report(ti, fi, params.alpha, params.curvature)?),
                    Inequality::LogHarnack => {
                        out.push(cell.log_harnack_report(ti, fi, params.log_epsilon, params.curvature)?)
                    }
                    Inequality::Lipschitz => out.push(cell.lipschitz_report(ti, fi, params.curvature)?),
                    Inequality::Expmoment => out.push(cell.exp_moment_report(ti, fi, params.exp_s, params.curvature)),
                }
            }
        }
    }
    Ok(out)
}
