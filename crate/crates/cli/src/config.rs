//! Experiment configuration: one TOML file, validated before any work.
//!
//! ```toml
//! seed = 7
//!
//! [potential]
//! kind = "dyson"            # or "riesz" (then `s` is required)
//! beta = 2.0
//! r = 1.0
//! R = 30.0
//! exterior = { cbe = 64, k = 2 }   # or an explicit list of points
//!
//! [verify]
//! k = 2
//! times = [0.1, 0.3]
//! n = 200000
//! ```
//!
//! Unknown keys anywhere are rejected. `docs/config.schema.json` is the
//! JSON-schema form of the same structure.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use loggas_core::config_space::{Configuration, ExteriorConfiguration};
use loggas_core::flow::{Domain, GridDensity, Landscape};
use loggas_core::gibbs::{cbe_exterior, Scheme};
use loggas_core::potentials::{KindTag, PotentialSpec};
use loggas_core::rng::child_seed;
use loggas_core::semigroup::LabOptions;
use loggas_core::suite::{function_by_name, CheckParams};
use loggas_core::{ConditionalPotential, Error, InteractionKind, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub potential: PotentialSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: KindTag,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub r: f64,
    #[serde(rename = "R", default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default)]
    pub exterior: ExteriorSource,
}

fn default_cutoff() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExteriorSource {
    Points(Vec<f64>),
    Cbe(CbeExterior),
}

impl Default for ExteriorSource {
    fn default() -> Self {
        ExteriorSource::Points(Vec::new())
    }
}

/// Exterior cut from one CβE draw of `cbe` points, rotated so that exactly
/// `k` points fall in the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbeExterior {
    pub cbe: usize,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub k: usize,
    pub n_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub chains: usize,
}

fn default_burn_in() -> usize {
    2000
}
fn default_thinning() -> usize {
    5
}
fn default_step() -> f64 {
    0.1
}
fn default_scheme() -> Scheme {
    Scheme::Metropolis
}
fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    pub k: usize,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_cap")]
    pub substep_cap: u32,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default = "default_projection")]
    pub max_projection_fraction: f64,
    #[serde(default = "one")]
    pub paths: usize,
    /// Common start of every path; drawn from the conditional sampler when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

fn default_cap() -> u32 {
    10
}
fn default_projection() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub k: usize,
    pub times: Vec<f64>,
    pub n: usize,
    #[serde(default = "default_functions")]
    pub functions: Vec<String>,
    #[serde(rename = "K", default)]
    pub curvature: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_eps_log")]
    pub log_epsilon: f64,
    #[serde(default = "default_exp_s")]
    pub exp_s: f64,
    #[serde(default = "default_pairs")]
    pub lipschitz_pairs: usize,
    #[serde(default = "default_z")]
    pub z_crit: f64,
    #[serde(default = "default_lab_dt")]
    pub dt: f64,
    /// Start `γ` at the centred unit lattice instead of a sampler draw.
    #[serde(default)]
    pub lattice: bool,
    /// Explicit `γ` and `η`; both or neither.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
}

fn default_functions() -> Vec<String> {
    ["bump_linear", "tanh_sine", "poly_bump_product"].map(String::from).to_vec()
}
fn default_alpha() -> f64 {
    CheckParams::default().alpha
}
fn default_eps_log() -> f64 {
    CheckParams::default().log_epsilon
}
fn default_exp_s() -> f64 {
    CheckParams::default().exp_s
}
fn default_pairs() -> usize {
    4
}
fn default_z() -> f64 {
    3.0
}
fn default_lab_dt() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    /// Number of particles: 1 (interval grid) or 2 (ordered triangle).
    #[serde(default = "one")]
    pub k: usize,
    pub n: usize,
    /// Fokker–Planck step cap.
    #[serde(default = "default_fp_dt")]
    pub dt: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub times: Vec<f64>,
    pub initial: DensitySpec,
    /// Reference measure of the EVI and end point of the geodesic.
    #[serde(default = "gibbs")]
    pub target: DensitySpec,
    #[serde(rename = "K", default)]
    pub curvature: f64,
    /// Interior times on the geodesic.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub tolerances: FlowTolerances,
}

fn default_fp_dt() -> f64 {
    1e-5
}
fn default_tau() -> f64 {
    1e-3
}
fn gibbs() -> DensitySpec {
    DensitySpec::Gibbs
}
fn default_samples() -> usize {
    9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTolerances {
    pub jko_l1: f64,
    pub calibration: f64,
    pub evi: f64,
    pub dissipation: f64,
    pub dispconv: f64,
}

impl Default for FlowTolerances {
    fn default() -> Self {
        Self { jko_l1: 1e-2, calibration: 1e-3, evi: -5e-3, dissipation: 0.02, dispconv: -5e-3 }
    }
}

/// Densities on the flow grid (unnormalised; every coordinate uses the same
/// one-dimensional profile).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Gaussian { mean: f64, var: f64 },
    Uniform { a: f64, b: f64 },
    Gibbs,
}

impl DensitySpec {
    pub fn build(&self, land: &Landscape) -> Result<GridDensity> {
        match *self {
            DensitySpec::Gaussian { mean, var } => {
                if !(var > 0.0) {
                    return Err(Error::InvalidParameter(format!("variance must be positive, got {var}")));
                }
                GridDensity::from_fn(land.domain, |x| x.iter().map(|y| (-(y - mean).powi(2) / (2.0 * var)).exp()).product())
            }
            DensitySpec::Uniform { a, b } => {
                GridDensity::from_fn(land.domain, |x| if x.iter().all(|y| (a..b).contains(y)) { 1.0 } else { 0.0 })
            }
            DensitySpec::Gibbs => land.stationary(),
        }
    }
}

impl FlowSection {
    pub fn domain(&self, r: f64) -> Result<Domain> {
        let d = match self.k {
            1 => Domain::Interval { r, n: self.n },
            2 => Domain::Triangle { r, n: self.n },
            k => return Err(Error::InvalidParameter(format!("flow grids support k = 1 or 2, got {k}"))),
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Used when `--out` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
    }
}

fn times_ok(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidParameter("times must be a nonempty list of nonnegative numbers".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("times must be strictly increasing".into()));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Everything that can be checked without computing.
    pub fn validate(&self) -> Result<()> {
        let p = &self.potential;
        self.interaction()?;
        if !(p.r > 0.0 && p.r.is_finite()) || !(p.cutoff >= p.r && p.cutoff.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 0 < r ≤ R < ∞, got r = {}, R = {}", p.r, p.cutoff)));
        }
        match &p.exterior {
            ExteriorSource::Points(pts) => {
                ExteriorConfiguration::new(pts.clone(), p.r, p.cutoff)?;
            }
            ExteriorSource::Cbe(c) => {
                if c.k == 0 || c.k > c.cbe {
                    return Err(Error::InvalidParameter(format!("cannot place {} of {} points", c.k, c.cbe)));
                }
            }
        }
        if let Some(s) = &self.sampler {
            self.sampler_config(s, 0).validate()?;
        }
        if let Some(s) = &self.sde {
            self.sde_config(s).validate()?;
            if s.k == 0 || s.paths == 0 {
                return Err(Error::InvalidParameter("sde.k and sde.paths must be at least 1".into()));
            }
            if let Some(x) = &s.start {
                self.check_start("sde.start", x, s.k)?;
            }
        }
        if let Some(v) = &self.verify {
            if v.k == 0 || v.n < 2 {
                return Err(Error::InvalidParameter("verify needs k ≥ 1 and n ≥ 2".into()));
            }
            times_ok(&v.times)?;
            if v.times[0] <= 0.0 {
                return Err(Error::InvalidParameter("verification times must be positive".into()));
            }
            for f in &v.functions {
                function_by_name(f, p.r)?;
            }
            if v.functions.is_empty() {
                return Err(Error::InvalidParameter("verify.functions is empty".into()));
            }
            for (name, x) in [
                ("K", v.curvature),
                ("alpha", v.alpha),
                ("log_epsilon", v.log_epsilon),
                ("exp_s", v.exp_s),
                ("z_crit", v.z_crit),
                ("dt", v.dt),
            ] {
                finite(name, x)?;
            }
            if !(v.alpha > 1.0) || !(v.z_crit > 0.0) || !(v.dt > 0.0) || !(v.log_epsilon > 0.0) {
                return Err(Error::InvalidParameter("need alpha > 1, z_crit > 0, dt > 0, log_epsilon > 0".into()));
            }
            match (&v.start, &v.eta) {
                (Some(g), Some(e)) => {
                    self.check_start("verify.start", g, v.k)?;
                    self.check_start("verify.eta", e, v.k)?;
                }
                (None, None) => {}
                _ => return Err(Error::InvalidParameter("verify.start and verify.eta go together".into())),
            }
        }
        if let Some(f) = &self.flow {
            f.domain(p.r)?;
            times_ok(&f.times)?;
            for (name, x) in [("dt", f.dt), ("tau", f.tau)] {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(Error::InvalidParameter(format!("flow.{name} must be positive, got {x}")));
                }
            }
            finite("flow.K", f.curvature)?;
        }
        Ok(())
    }

    fn check_start(&self, name: &str, x: &[f64], k: usize) -> Result<()> {
        let r = self.potential.r;
        if x.len() != k {
            return Err(Error::InvalidParameter(format!("{name} has {} points, expected {k}", x.len())));
        }
        if x.iter().any(|y| !(y.abs() < r)) {
            return Err(Error::InvalidParameter(format!("{name} must lie inside (-{r}, {r})")));
        }
        Ok(())
    }

    pub fn interaction(&self) -> Result<InteractionKind> {
        let p = &self.potential;
        PotentialSpec { kind: p.kind, beta: p.beta, s: p.s, r: p.r, cutoff: p.cutoff, exterior: Vec::new() }
            .interaction()
    }

    /// The conditional potential; a CβE exterior is drawn from child stream 0
    /// of the master seed.
    pub fn potential(&self) -> Result<ConditionalPotential> {
        let p = &self.potential;
        let kind = self.interaction()?;
        let ext = match &p.exterior {
            ExteriorSource::Points(pts) => ExteriorConfiguration::new(pts.clone(), p.r, p.cutoff)?,
            ExteriorSource::Cbe(c) => cbe_exterior(c.cbe, p.beta, c.k, p.r, p.cutoff, child_seed(self.seed, 0))?.0,
        };
        ConditionalPotential::new(kind, ext)
    }

    pub fn sampler_config(&self, s: &SamplerSection, tag: u64) -> loggas_core::gibbs::SamplerConfig {
        loggas_core::gibbs::SamplerConfig {
            k: s.k,
            n_samples: s.n_samples,
            burn_in: s.burn_in,
            thinning: s.thinning,
            step_size: s.step_size,
            scheme: s.scheme,
            seed: child_seed(self.seed, tag),
            chains: s.chains,
            coordinate_order: None,
        }
    }

    pub fn sde_config(&self, s: &SdeSection) -> loggas_core::dynamics::SdeConfig {
        loggas_core::dynamics::SdeConfig {
            dt: s.dt,
            t_final: s.t_final,
            substep_cap: s.substep_cap,
            seed: child_seed(self.seed, 2),
            record_stride: s.record_stride,
            max_projection_fraction: s.max_projection_fraction,
        }
    }

    pub fn check_params(v: &VerifySection) -> CheckParams {
        CheckParams { curvature: v.curvature, alpha: v.alpha, log_epsilon: v.log_epsilon, exp_s: v.exp_s }
    }

    pub fn lab_options(v: &VerifySection) -> LabOptions {
        LabOptions { dt: v.dt, z_crit: v.z_crit, ..LabOptions::default() }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_string(self).expect("configs serialise"))
    }

    /// Short label of the potential, used to name experiments.
    pub fn label(&self) -> String {
        let p = &self.potential;
        let kind = match p.kind {
            KindTag::Dyson => format!("dyson_b{}", p.beta),
            KindTag::Riesz => format!("riesz_b{}_s{}", p.beta, p.s.unwrap_or(f64::NAN)),
        };
        format!("{kind}_r{}", p.r)
    }
}

pub fn hash_json(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn configuration(points: &[f64]) -> Configuration {
    Configuration::new(points.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 1\n[potential]\nkind = \"dyson\"\nbeta = 2.0\nr = 1.0\n";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.potential.cutoff, 30.0);
        assert_eq!(c.potential.exterior, ExteriorSource::Points(vec![]));
        assert!(c.verify.is_none());
        assert_eq!(c.hash(), parse_config(MINIMAL).unwrap().hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config(&format!("{MINIMAL}colour = 3\n")).is_err());
        assert!(parse_config(&MINIMAL.replace("beta", "betta")).is_err());
        let bad_ext = format!("{MINIMAL}exterior = {{ cbe = 64, k = 2, extra = 1 }}\n");
        assert!(parse_config(&bad_ext).is_err());
        let bad_verify = format!("{MINIMAL}[verify]\nk = 2\ntimes = [0.1]\nn = 10\nzcrit = 3\n");
        assert!(parse_config(&bad_verify).is_err());
    }

    #[test]
    fn semantic_errors_are_rejected() {
        assert!(parse_config(&MINIMAL.replace("\"dyson\"", "\"riesz\"")).is_err());
        assert!(parse_config(&MINIMAL.replace("r = 1.0", "r = -1.0")).is_err());
        let bad_times = format!("{MINIMAL}[verify]\nk = 2\ntimes = [0.3, 0.1]\nn = 10\n");
        assert!(parse_config(&bad_times).is_err());
        let bad_fn = format!("{MINIMAL}[verify]\nk = 2\ntimes = [0.1]\nn = 10\nfunctions = [\"nope\"]\n");
        assert!(parse_config(&bad_fn).is_err());
        let inside = format!("{MINIMAL}exterior = [0.5]\n");
        assert!(parse_config(&inside).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(&MINIMAL.replace("seed = 1", "seed = 2")).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn flow_densities_parse() {
        let text = format!(
            "{MINIMAL}[flow]\nn = 64\ntimes = [0.1]\ninitial = {{ shape = \"gaussian\", mean = 0.3, var = 0.09 }}\n"
        );
        let c = parse_config(&text).unwrap();
        let f = c.flow.unwrap();
        assert_eq!(f.target, DensitySpec::Gibbs);
        assert_eq!(f.tolerances, FlowTolerances::default());
    }
}
