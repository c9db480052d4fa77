//! Reflected Euler–Maruyama for `dX_i = −½ ∂_iΨ(X) dt + dB_i` on `[-r, r]^k`.
//!
//! A step that would reorder particles (or make two coincide) is redone as two
//! half steps whose Brownian increments are a Brownian-bridge split of the
//! original one, recursively up to `substep_cap` levels. If the deepest level
//! still fails, the state is projected back to the ordered chamber.
//!
//! Groups of states that share noise (synchronous coupling) are always
//! substepped together, so every member sees the same Brownian path.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config_space::Configuration;
use crate::error::{Error, Result};
use crate::gibbs::reflect;
use crate::potentials::ConditionalPotential;
use crate::rng::{self, StreamRng};

/// Separation enforced by the order-preserving projection.
pub const EPS_SEP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_cap")]
    pub substep_cap: u32,
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Largest tolerated fraction of steps that needed a projection.
    #[serde(default = "default_max_projection")]
    pub max_projection_fraction: f64,
}

fn default_cap() -> u32 {
    10
}
fn default_stride() -> usize {
    1
}
fn default_max_projection() -> f64 {
    0.01
}

impl SdeConfig {
    pub fn new(dt: f64, t_final: f64, seed: u64) -> Self {
        Self {
            dt,
            t_final,
            substep_cap: default_cap(),
            seed,
            record_stride: default_stride(),
            max_projection_fraction: default_max_projection(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_final must be nonnegative, got {}", self.t_final)));
        }
        if self.t_final > 0.0 && self.dt > self.t_final {
            return Err(Error::InvalidParameter(format!("dt {} exceeds t_final {}", self.dt, self.t_final)));
        }
        if self.substep_cap == 0 {
            return Err(Error::InvalidParameter("substep_cap must be at least 1".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter("record_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps; the step is shrunk so that they end exactly at
    /// `t_final`.
    pub fn n_steps(&self) -> usize {
        steps_for(self.t_final, self.dt)
    }

    pub fn effective_dt(&self) -> f64 {
        let n = self.n_steps();
        if n == 0 {
            self.dt
        } else {
            self.t_final / n as f64
        }
    }
}

pub(crate) fn steps_for(t: f64, dt: f64) -> usize {
    if t <= 0.0 {
        0
    } else {
        (t / dt - 1e-9).ceil().max(1.0) as usize
    }
}

#[inline]
fn strictly_increasing(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[1] > w[0])
}

/// Sorts `y` and pushes apart near-coincident neighbours around their
/// midpoint, keeping everything inside `[-r, r]`.
pub fn project_ordered(y: &mut [f64], r: f64) {
    y.sort_by(f64::total_cmp);
    for i in 1..y.len() {
        if y[i] - y[i - 1] < EPS_SEP {
            let m = 0.5 * (y[i] + y[i - 1]);
            y[i - 1] = m - 0.5 * EPS_SEP;
            y[i] = m + 0.5 * EPS_SEP;
        }
    }
    // the midpoint moves can cascade; two clamping passes settle them
    let n = y.len();
    for i in 1..n {
        y[i] = y[i].max(y[i - 1] + EPS_SEP);
    }
    if n > 0 {
        y[n - 1] = y[n - 1].min(r);
        for i in (0..n - 1).rev() {
            y[i] = y[i].min(y[i + 1] - EPS_SEP);
        }
        y[0] = y[0].max(-r);
    }
}

/// Source of the standard normals used to split Brownian increments.
pub(crate) enum Bridge<'a> {
    /// Split evenly (`z = 0`).
    Midpoint,
    Random(&'a mut StreamRng),
}

impl Bridge<'_> {
    #[inline]
    fn z(&mut self) -> f64 {
        match self {
            Bridge::Midpoint => 0.0,
            Bridge::Random(rng) => rng.sample(StandardNormal),
        }
    }
}

/// Integrator for a group of `m` states of `k` particles stored flat.
pub(crate) struct GroupStepper<'a> {
    pot: &'a ConditionalPotential,
    k: usize,
    cap: u32,
    grad: Vec<f64>,
    prop: Vec<f64>,
    /// Set when the current top-level step needed a projection.
    projected: bool,
}

impl<'a> GroupStepper<'a> {
    pub(crate) fn new(pot: &'a ConditionalPotential, k: usize, m: usize, cap: u32) -> Self {
        Self { pot, k, cap, grad: vec![0.0; k], prop: vec![0.0; k * m], projected: false }
    }

    /// Advances every state of the group by `dt` with the shared increment
    /// `dw`. Returns whether a projection was needed.
    pub(crate) fn step(&mut self, xs: &mut [f64], dt: f64, dw: &[f64], bridge: &mut Bridge<'_>) -> bool {
        self.projected = false;
        self.advance(xs, dt, dw, 0, bridge);
        self.projected
    }

    fn euler(&mut self, xs: &[f64], dt: f64, dw: &[f64]) -> bool {
        let k = self.k;
        let r = self.pot.r();
        let mut ok = true;
        for (x, y) in xs.chunks_exact(k).zip(self.prop.chunks_exact_mut(k)) {
            self.pot.drift_gradient_into(x, &mut self.grad);
            for i in 0..k {
                y[i] = reflect(x[i] - 0.5 * self.grad[i] * dt + dw[i], r);
            }
            ok &= strictly_increasing(y) && y.iter().all(|v| v.is_finite());
        }
        ok
    }

    fn advance(&mut self, xs: &mut [f64], dt: f64, dw: &[f64], depth: u32, bridge: &mut Bridge<'_>) {
        let n = xs.len();
        if self.euler(xs, dt, dw) {
            xs.copy_from_slice(&self.prop[..n]);
            return;
        }
        if depth >= self.cap {
            let r = self.pot.r();
            for y in self.prop[..n].chunks_exact_mut(self.k) {
                if !strictly_increasing(y) || y.iter().any(|v| !v.is_finite()) {
                    for v in y.iter_mut().filter(|v| !v.is_finite()) {
                        *v = 0.0;
                    }
                    project_ordered(y, r);
                    self.projected = true;
                }
            }
            xs.copy_from_slice(&self.prop[..n]);
            return;
        }
        let half = 0.5 * dt.sqrt();
        let dw1: Vec<f64> = dw.iter().map(|w| 0.5 * w + half * bridge.z()).collect();
        let dw2: Vec<f64> = dw.iter().zip(&dw1).map(|(w, a)| w - a).collect();
        self.advance(xs, 0.5 * dt, &dw1, depth + 1, bridge);
        self.advance(xs, 0.5 * dt, &dw2, depth + 1, bridge);
    }
}

fn check_state(pot: &ConditionalPotential, gamma: &Configuration) -> Result<()> {
    let r = pot.r();
    if let Some(&p) = gamma.points().iter().find(|p| p.abs() > r) {
        return Err(Error::OutsideWindow { point: p, r });
    }
    if gamma.has_coincident_points() {
        return Err(Error::Collision);
    }
    Ok(())
}

/// One integrator step with caller-supplied increment `noise ~ N(0, dt)`.
/// Substeps split the increment evenly.
pub fn step(state: &Configuration, pot: &ConditionalPotential, dt: f64, noise: &[f64]) -> Result<Configuration> {
    step_with_cap(state, pot, dt, noise, default_cap())
}

pub fn step_with_cap(
    state: &Configuration,
    pot: &ConditionalPotential,
    dt: f64,
    noise: &[f64],
    substep_cap: u32,
) -> Result<Configuration> {
    check_state(pot, state)?;
    if noise.len() != state.count() {
        return Err(Error::DimensionMismatch { expected: state.count(), got: noise.len() });
    }
    let mut x = state.points().to_vec();
    GroupStepper::new(pot, x.len(), 1, substep_cap).step(&mut x, dt, noise, &mut Bridge::Midpoint);
    Ok(Configuration::new(x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub stream_id: u64,
    pub times: Vec<f64>,
    pub states: Vec<Configuration>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub config: SdeConfig,
    pub paths: Vec<Path>,
    /// Top-level steps that ended with an order projection, over all paths.
    pub projections: usize,
    pub steps: usize,
}

/// Runs the states of one group from `x` (flat, `m` states) through
/// `n_steps` steps with noise from `rng`, calling `record(step_index, xs)`
/// after every step. Returns the number of projected steps.
pub(crate) fn run_group<F: FnMut(usize, &[f64])>(
    pot: &ConditionalPotential,
    xs: &mut [f64],
    k: usize,
    dt: f64,
    n_steps: usize,
    cap: u32,
    rng: &mut StreamRng,
    mut record: F,
) -> usize {
    let m = xs.len().checked_div(k).unwrap_or(0);
    let mut stepper = GroupStepper::new(pot, k, m.max(1), cap);
    let sd = dt.sqrt();
    let mut dw = vec![0.0; k];
    let mut projections = 0;
    for s in 0..n_steps {
        for w in dw.iter_mut() {
            *w = sd * rng.sample::<f64, _>(StandardNormal);
        }
        if k > 0 && stepper.step(xs, dt, &dw, &mut Bridge::Random(rng)) {
            projections += 1;
        }
        record(s + 1, xs);
    }
    projections
}

fn check_projections(projections: usize, steps: usize, max_fraction: f64) -> Result<()> {
    if steps > 0 && projections as f64 > max_fraction * steps as f64 {
        return Err(Error::Unstable { projections, steps });
    }
    Ok(())
}

fn simulate_paths(
    starts: &[Configuration],
    pot: &ConditionalPotential,
    cfg: &SdeConfig,
    stream_base: u64,
) -> Result<TrajectoryEnsemble> {
    cfg.validate()?;
    let k = starts.first().map_or(0, |s| s.count());
    for s in starts {
        check_state(pot, s)?;
        if s.count() != k {
            return Err(Error::CountMismatch(k, s.count()));
        }
    }
    let n_steps = cfg.n_steps();
    let dt = cfg.effective_dt();
    let m = starts.len();
    let mut rng = rng::stream(cfg.seed, stream_base);
    let mut xs: Vec<f64> = starts.iter().flat_map(|s| s.points().iter().copied()).collect();
    let mut times = vec![0.0];
    let mut recorded: Vec<Vec<f64>> = vec![xs.clone()];
    let stride = cfg.record_stride;
    let projections = run_group(pot, &mut xs, k, dt, n_steps, cfg.substep_cap, &mut rng, |s, x| {
        if s % stride == 0 || s == n_steps {
            times.push(s as f64 * dt);
            recorded.push(x.to_vec());
        }
    });
    check_projections(projections, n_steps, cfg.max_projection_fraction)?;
    let paths = (0..m)
        .map(|j| Path {
            stream_id: stream_base,
            times: times.clone(),
            states: recorded
                .iter()
                .map(|flat| Configuration::new(flat[j * k..(j + 1) * k].to_vec()))
                .collect(),
        })
        .collect();
    Ok(TrajectoryEnsemble { config: cfg.clone(), paths, projections, steps: n_steps })
}

/// A single path from `γ0`.
pub fn evolve(gamma0: &Configuration, pot: &ConditionalPotential, cfg: &SdeConfig) -> Result<TrajectoryEnsemble> {
    simulate_paths(std::slice::from_ref(gamma0), pot, cfg, 0)
}

/// Independent paths, path `i` driven by stream `i`. Runs in parallel; the
/// result does not depend on the number of threads.
pub fn evolve_many(starts: &[Configuration], pot: &ConditionalPotential, cfg: &SdeConfig) -> Result<TrajectoryEnsemble> {
    cfg.validate()?;
    let parts: Vec<TrajectoryEnsemble> = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut c = cfg.clone();
            c.max_projection_fraction = f64::INFINITY;
            simulate_paths(std::slice::from_ref(s), pot, &c, i as u64)
        })
        .collect::<Result<_>>()?;
    let projections = parts.iter().map(|p| p.projections).sum();
    let steps = parts.iter().map(|p| p.steps).sum();
    check_projections(projections, steps, cfg.max_projection_fraction)?;
    Ok(TrajectoryEnsemble {
        config: cfg.clone(),
        paths: parts.into_iter().flat_map(|p| p.paths).collect(),
        projections,
        steps,
    })
}

/// Two paths driven by identical Brownian increments.
pub fn evolve_coupled(
    gamma0: &Configuration,
    gamma0p: &Configuration,
    pot: &ConditionalPotential,
    cfg: &SdeConfig,
) -> Result<(TrajectoryEnsemble, TrajectoryEnsemble)> {
    if gamma0.count() != gamma0p.count() {
        return Err(Error::CountMismatch(gamma0.count(), gamma0p.count()));
    }
    let mut both = simulate_paths(&[gamma0.clone(), gamma0p.clone()], pot, cfg, 0)?;
    let second = both.paths.pop().unwrap();
    let mut other = both.clone();
    other.paths = vec![second];
    Ok((both, other))
}

/// Terminal states of many independent replicas of a coupled group.
///
/// Replica `j` starts every member of the group at `starts` and is driven by
/// stream `j` of `cfg.seed`; all members share its noise. For each replica and
/// each requested time, `observe(time_index, states)` is called with the flat
/// `m·k` state vector, and its results are returned replica-major.
pub fn simulate_replicas<T, F>(
    starts: &[Configuration],
    pot: &ConditionalPotential,
    cfg: &SdeConfig,
    times: &[f64],
    replicas: usize,
    observe: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync,
{
    cfg.validate()?;
    let k = starts.first().map_or(0, |s| s.count());
    for s in starts {
        check_state(pot, s)?;
        if s.count() != k {
            return Err(Error::CountMismatch(k, s.count()));
        }
    }
    let dt = cfg.dt;
    let mut record_steps: Vec<usize> = times.iter().map(|&t| steps_for(t, dt)).collect();
    if record_steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("record times must be non-decreasing".into()));
    }
    let n_steps = record_steps.last().copied().unwrap_or(0);
    let flat0: Vec<f64> = starts.iter().flat_map(|s| s.points().iter().copied()).collect();
    record_steps.push(usize::MAX);

    const CHUNK: usize = 256;
    let chunks: Vec<(Vec<T>, usize)> = (0..replicas.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::with_capacity(CHUNK * times.len());
            let mut projections = 0;
            for j in (c * CHUNK)..((c + 1) * CHUNK).min(replicas) {
                let mut rng = rng::stream(cfg.seed, j as u64);
                let mut xs = flat0.clone();
                let mut next = 0;
                while record_steps[next] == 0 {
                    out.push(observe(next, &xs));
                    next += 1;
                }
                projections += run_group(pot, &mut xs, k, dt, n_steps, cfg.substep_cap, &mut rng, |s, x| {
                    while record_steps[next] == s {
                        out.push(observe(next, x));
                        next += 1;
                    }
                });
            }
            (out, projections)
        })
        .collect();
    let projections: usize = chunks.iter().map(|c| c.1).sum();
    check_projections(projections, n_steps * replicas, cfg.max_projection_fraction)?;
    Ok(chunks.into_iter().flat_map(|c| c.0).collect())
}
