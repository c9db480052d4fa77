//! MCMC for the conditional Gibbs measures `∝ e^{−Ψ}` on `[-r, r]^k` and for
//! the finite circular β-ensemble, plus a quadrature oracle at `k = 1`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config_space::{Configuration, ExteriorConfiguration};
use crate::error::{Error, Result};
use crate::potentials::ConditionalPotential;
use crate::rng::{self, StreamRng};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Single-site random walk with reflected proposals.
    Metropolis,
    /// Metropolis-adjusted Langevin on the full vector.
    Mala,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub k: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub step_size: f64,
    pub scheme: Scheme,
    pub seed: u64,
    /// Number of independent chains; samples are split evenly and
    /// concatenated in chain order.
    #[serde(default = "one")]
    pub chains: usize,
    /// Order in which a Metropolis sweep visits coordinates.
    #[serde(default)]
    pub coordinate_order: Option<Vec<usize>>,
}

fn one() -> usize {
    1
}

impl SamplerConfig {
    pub fn new(k: usize, n_samples: usize, scheme: Scheme, seed: u64) -> Self {
        Self {
            k,
            n_samples,
            burn_in: 2000,
            thinning: 5,
            step_size: 0.1,
            scheme,
            seed,
            chains: 1,
            coordinate_order: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.chains == 0 {
            return Err(Error::InvalidParameter("chains must be at least 1".into()));
        }
        if let Some(order) = &self.coordinate_order {
            let mut seen = order.clone();
            seen.sort_unstable();
            if seen != (0..self.k).collect::<Vec<_>>() {
                return Err(Error::InvalidParameter("coordinate_order must be a permutation of 0..k".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Post-burn-in acceptance rate, averaged over chains.
    pub acceptance_rate: f64,
    /// Effective sample size of each sorted coordinate.
    pub effective_sample_size: Vec<f64>,
    /// Largest autocorrelation lag used by the ESS estimator.
    pub max_lag: usize,
    /// Step size after adaptation (first chain).
    pub adapted_step_size: f64,
}

/// Reflects `x` into `[-r, r]`.
#[inline]
pub fn reflect(x: f64, r: f64) -> f64 {
    if x.abs() <= r {
        return x;
    }
    let period = 4.0 * r;
    let mut y = (x + r).rem_euclid(period);
    if y > 2.0 * r {
        y = period - y;
    }
    (y - r).clamp(-r, r)
}

/// Log-density at `y` of `reflect(m + h·Z)`, summing the nearest images.
fn log_reflected_normal(y: f64, m: f64, h: f64, r: f64) -> f64 {
    let period = 4.0 * r;
    let base = ((m + r) / period).round();
    let mut terms = [0.0f64; 10];
    let mut n = 0;
    for j in -2..=2 {
        let shift = (base + j as f64) * period;
        for pre in [y + shift, 2.0 * r - y + shift] {
            let z = (pre - m) / h;
            terms[n] = -0.5 * z * z;
            n += 1;
        }
    }
    stats::log_sum_exp(&terms[..n]) - h.ln() - 0.5 * (2.0 * PI).ln()
}

struct Chain<'a> {
    pot: &'a ConditionalPotential,
    x: Vec<f64>,
    energy: f64,
    grad: Vec<f64>,
    h: f64,
    scheme: Scheme,
    order: Vec<usize>,
    accepted: u64,
    proposed: u64,
}

impl<'a> Chain<'a> {
    fn new(pot: &'a ConditionalPotential, x: Vec<f64>, h: f64, scheme: Scheme, order: Vec<usize>) -> Self {
        let energy = pot.energy_of(&x);
        let mut grad = vec![0.0; x.len()];
        pot.gradient_into(&x, &mut grad);
        Self { pot, x, energy, grad, h, scheme, order, accepted: 0, proposed: 0 }
    }

    fn sweep(&mut self, rng: &mut StreamRng) {
        match self.scheme {
            Scheme::Metropolis => self.metropolis_sweep(rng),
            Scheme::Mala => self.mala_step(rng),
        }
    }

    fn metropolis_sweep(&mut self, rng: &mut StreamRng) {
        let r = self.pot.r();
        for idx in 0..self.order.len() {
            let i = self.order[idx];
            let z: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let old = self.x[i];
            let new = reflect(old + self.h * z, r);
            let delta = self.pot.site_energy(&self.x, i, new) - self.pot.site_energy(&self.x, i, old);
            self.proposed += 1;
            if delta.is_finite() && (delta <= 0.0 || u < (-delta).exp()) {
                self.x[i] = new;
                self.energy += delta;
                self.accepted += 1;
            }
        }
    }

    fn mala_step(&mut self, rng: &mut StreamRng) {
        let r = self.pot.r();
        let h = self.h;
        let k = self.x.len();
        let half_h2 = 0.5 * h * h;
        let y: Vec<f64> = (0..k)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                reflect(self.x[i] - half_h2 * self.grad[i] + h * z, r)
            })
            .collect();
        let u: f64 = rng.random();
        self.proposed += 1;
        let ey = self.pot.energy_of(&y);
        if !ey.is_finite() {
            return;
        }
        let mut gy = vec![0.0; k];
        self.pot.gradient_into(&y, &mut gy);
        let mut log_q_fwd = 0.0;
        let mut log_q_bwd = 0.0;
        for i in 0..k {
            log_q_fwd += log_reflected_normal(y[i], self.x[i] - half_h2 * self.grad[i], h, r);
            log_q_bwd += log_reflected_normal(self.x[i], y[i] - half_h2 * gy[i], h, r);
        }
        let log_a = -(ey - self.energy) + log_q_bwd - log_q_fwd;
        if log_a.is_finite() && (log_a >= 0.0 || u.ln() < log_a) {
            self.x = y;
            self.energy = ey;
            self.grad = gy;
            self.accepted += 1;
        }
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }
}

/// Initial state: evenly spaced interior points, which is collision free and
/// has finite energy.
fn initial_state(pot: &ConditionalPotential, k: usize, rng: &mut StreamRng) -> Vec<f64> {
    let r = pot.r();
    (0..k)
        .map(|i| {
            let jitter: f64 = rng.random_range(-0.25..0.25);
            -r + (i as f64 + 0.5 + jitter) * 2.0 * r / k as f64
        })
        .collect()
}

fn target_acceptance(scheme: Scheme) -> f64 {
    match scheme {
        Scheme::Metropolis => 0.234,
        Scheme::Mala => 0.574,
    }
}

/// Runs burn-in with Robbins–Monro adaptation of `log h` in batches of 50
/// sweeps; the step is frozen afterwards.
fn burn_in(chain: &mut Chain<'_>, rng: &mut StreamRng, sweeps: usize, target: f64) {
    const BATCH: usize = 50;
    let h_max = 2.0 * chain.pot.r();
    let mut batch = 0usize;
    let mut done = 0usize;
    while done < sweeps {
        let n = BATCH.min(sweeps - done);
        chain.reset_counts();
        for _ in 0..n {
            chain.sweep(rng);
        }
        done += n;
        batch += 1;
        let gain = 1.0 / (batch as f64).sqrt();
        chain.h = (chain.h.ln() + gain * (chain.rate() - target)).exp().min(h_max);
    }
    chain.reset_counts();
}

/// Draws sorted samples from `∝ e^{−Ψ}` on `[-r, r]^k`.
pub fn sample_conditional(
    pot: &ConditionalPotential,
    cfg: &SamplerConfig,
) -> Result<(Vec<Configuration>, ChainDiagnostics)> {
    cfg.validate()?;
    let order = cfg.coordinate_order.clone().unwrap_or_else(|| (0..cfg.k).collect());
    let per_chain: Vec<usize> = (0..cfg.chains)
        .map(|c| cfg.n_samples / cfg.chains + usize::from(c < cfg.n_samples % cfg.chains))
        .collect();
    let target = target_acceptance(cfg.scheme);
    let results: Vec<(Vec<Vec<f64>>, f64, f64)> = per_chain
        .par_iter()
        .enumerate()
        .map(|(c, &n)| {
            let mut rng = rng::stream(cfg.seed, c as u64);
            let x0 = initial_state(pot, cfg.k, &mut rng);
            let mut chain = Chain::new(pot, x0, cfg.step_size, cfg.scheme, order.clone());
            burn_in(&mut chain, &mut rng, cfg.burn_in, target);
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                for _ in 0..cfg.thinning.max(1) {
                    chain.sweep(&mut rng);
                }
                let mut s = chain.x.clone();
                s.sort_by(f64::total_cmp);
                out.push(s);
            }
            (out, chain.rate(), chain.h)
        })
        .collect();

    let acceptance_rate = results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64;
    if acceptance_rate < 0.01 {
        return Err(Error::DegenerateChain(acceptance_rate));
    }
    let adapted_step_size = results[0].2;
    let samples: Vec<Vec<f64>> = results.into_iter().flat_map(|r| r.0).collect();
    let mut ess = Vec::with_capacity(cfg.k);
    let mut max_lag = 0;
    for i in 0..cfg.k {
        let series: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let (e, lag) = stats::effective_sample_size(&series);
        ess.push(e);
        max_lag = max_lag.max(lag);
    }
    let configs = samples.into_iter().map(Configuration::new).collect();
    Ok((configs, ChainDiagnostics { acceptance_rate, effective_sample_size: ess, max_lag, adapted_step_size }))
}

/// Metropolis transition matrix on a finite state space with symmetric
/// proposal matrix `q` and energies `e`.
pub fn metropolis_kernel(energies: &[f64], q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = energies.len();
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut stay = 1.0;
        for j in 0..n {
            if i != j {
                p[i][j] = q[i][j] * (energies[i] - energies[j]).exp().min(1.0);
                stay -= p[i][j];
            }
        }
        p[i][i] = stay;
    }
    p
}

/// Normalised one-particle density `e^{−Ψ}/Z` tabulated on a uniform grid of
/// `[-r, r]`, normalised with the trapezoid rule.
#[derive(Clone, Debug)]
pub struct Density1p {
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub dx: f64,
    /// Cumulative trapezoid integral at the nodes.
    cumulative: Vec<f64>,
}

pub fn exact_density_1p(pot: &ConditionalPotential, grid_size: usize) -> Result<Density1p> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter("grid_size must be at least 2".into()));
    }
    let r = pot.r();
    let dx = 2.0 * r / (grid_size - 1) as f64;
    let xs: Vec<f64> = (0..grid_size).map(|i| (-r + i as f64 * dx).clamp(-r, r)).collect();
    let psi: Vec<f64> = xs.iter().map(|&x| pot.energy_1p(x)).collect();
    let min = psi.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::VanishingDensity);
    }
    let mut density: Vec<f64> = psi.iter().map(|p| (min - p).exp()).collect();
    let weight = |i: usize| if i == 0 || i == grid_size - 1 { 0.5 * dx } else { dx };
    let z: f64 = density.iter().enumerate().map(|(i, d)| d * weight(i)).sum();
    if !(z > 0.0) {
        return Err(Error::VanishingDensity);
    }
    density.iter_mut().for_each(|d| *d /= z);
    let mut cumulative = vec![0.0; grid_size];
    for i in 1..grid_size {
        cumulative[i] = cumulative[i - 1] + 0.5 * dx * (density[i - 1] + density[i]);
    }
    Ok(Density1p { xs, density, dx, cumulative })
}

impl Density1p {
    pub fn r(&self) -> f64 {
        -self.xs[0]
    }

    pub fn normalisation(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// CDF of the piecewise-linear interpolant.
    pub fn cdf(&self, x: f64) -> f64 {
        let r = self.r();
        if x <= -r {
            return 0.0;
        }
        if x >= r {
            return 1.0;
        }
        let t = (x + r) / self.dx;
        let i = (t.floor() as usize).min(self.xs.len() - 2);
        let s = x - self.xs[i];
        let slope = (self.density[i + 1] - self.density[i]) / self.dx;
        (self.cumulative[i] + self.density[i] * s + 0.5 * slope * s * s).min(1.0)
    }

    pub fn mean(&self) -> f64 {
        let n = self.xs.len();
        self.xs
            .iter()
            .zip(&self.density)
            .enumerate()
            .map(|(i, (x, d))| x * d * if i == 0 || i == n - 1 { 0.5 * self.dx } else { self.dx })
            .sum()
    }
}

/// Samples of the circular β-ensemble with `k` points, rescaled to unit mean
/// spacing: `x = kθ/(2π) − k/2 ∈ [−k/2, k/2)`, sorted.
pub fn sample_cbe(k: usize, beta: f64, n: usize, seed: u64) -> Result<Vec<Configuration>> {
    Ok(sample_cbe_angles(k, beta, n, seed)?
        .into_iter()
        .map(|th| Configuration::new(th.iter().map(|t| k as f64 * t / (2.0 * PI) - k as f64 / 2.0).collect::<Vec<_>>()))
        .collect())
}

/// Raw angle samples in `[0, 2π)`, in chain (unsorted) order.
pub fn sample_cbe_angles(k: usize, beta: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("β must be nonnegative, got {beta}")));
    }
    let mut rng = rng::stream(seed, 0);
    let two_pi = 2.0 * PI;
    let mut th: Vec<f64> = (0..k).map(|i| two_pi * (i as f64 + rng.random_range(0.0..0.5)) / k as f64).collect();
    // log|e^{ia} − e^{ib}| = log|2 sin((a−b)/2)|
    let site = |th: &[f64], i: usize, a: f64| -> f64 {
        th.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &b)| (2.0 * (0.5 * (a - b)).sin()).abs().ln())
            .sum::<f64>()
            * beta
    };
    let mut h = PI / k as f64;
    let (mut acc, mut prop);
    let sweep = |th: &mut Vec<f64>, h: f64, rng: &mut StreamRng, acc: &mut u64, prop: &mut u64| {
        for i in 0..k {
            let new = (th[i] + h * rng.random_range(-1.0..1.0)).rem_euclid(two_pi);
            let u: f64 = rng.random();
            let dl = site(th, i, new) - site(th, i, th[i]);
            *prop += 1;
            if dl.is_finite() && (dl >= 0.0 || u < dl.exp()) || (beta == 0.0) {
                th[i] = new;
                *acc += 1;
            }
        }
    };
    let burn = 200 + 20 * k;
    for b in 0..burn / 25 {
        acc = 0;
        prop = 0;
        for _ in 0..25 {
            sweep(&mut th, h, &mut rng, &mut acc, &mut prop);
        }
        let rate = acc as f64 / prop as f64;
        h = (h.ln() + (rate - 0.3) / ((b + 1) as f64).sqrt()).exp().min(PI);
    }
    acc = 0;
    prop = 0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..2 {
            sweep(&mut th, h, &mut rng, &mut acc, &mut prop);
        }
        out.push(th.clone());
    }
    let rate = if prop == 0 { 1.0 } else { acc as f64 / prop as f64 };
    if rate < 0.01 {
        return Err(Error::DegenerateChain(rate));
    }
    Ok(out)
}

/// Builds a conditioning exterior from one CβE configuration with
/// `total` points on `[−total/2, total/2)`: the circle is rotated until exactly
/// `k` points fall inside `[-r, r]`. Returns the exterior and the interior
/// points (a natural starting configuration).
pub fn cbe_exterior(
    total: usize,
    beta: f64,
    k: usize,
    r: f64,
    cutoff: f64,
    seed: u64,
) -> Result<(ExteriorConfiguration, Configuration)> {
    if k > total {
        return Err(Error::InvalidParameter(format!("cannot place {k} of {total} points in the window")));
    }
    // a single well-mixed draw: the last of a short run
    let base = sample_cbe(total, beta, 50, seed)?.pop().unwrap();
    let half = total as f64 / 2.0;
    let margin = 1e-3;
    let steps = (total as f64 / margin) as usize;
    for step in 0..steps {
        let shift = step as f64 * margin;
        let pts: Vec<f64> = base.points().iter().map(|x| (x + shift + half).rem_euclid(2.0 * half) - half).collect();
        let inside = pts.iter().filter(|x| x.abs() <= r).count();
        let clear = pts.iter().all(|x| (x.abs() - r).abs() > margin);
        if inside == k && clear {
            let (interior, exterior): (Vec<f64>, Vec<f64>) = pts.into_iter().partition(|x| x.abs() <= r);
            return Ok((ExteriorConfiguration::new(exterior, r, cutoff)?, Configuration::new(interior)));
        }
    }
    Err(Error::InvalidParameter(format!("no rotation places exactly {k} points in [-{r}, {r}]")))
}
