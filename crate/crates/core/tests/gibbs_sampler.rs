use std::f64::consts::PI;

use loggas_core::gibbs::*;
use loggas_core::stats::{effective_sample_size, ks_one_sample, rayleigh_p_value};
use loggas_core::{ConditionalPotential, ExteriorConfiguration, InteractionKind};
use proptest::prelude::*;

fn dyson_pm2(beta: f64) -> ConditionalPotential {
    let ext = ExteriorConfiguration::new(vec![-2.0, 2.0], 1.0, 10.0).unwrap();
    ConditionalPotential::new(InteractionKind::DysonLog { beta }, ext).unwrap()
}

#[test]
fn one_particle_metropolis_matches_quadrature() {
    let pot = dyson_pm2(2.0);
    let dens = exact_density_1p(&pot, 20_001).unwrap();
    let cfg = SamplerConfig::new(1, 100_000, Scheme::Metropolis, 1);
    let (samples, diag) = sample_conditional(&pot, &cfg).unwrap();
    let xs: Vec<f64> = samples.iter().map(|c| c.points()[0]).collect();
    let ks = ks_one_sample(&xs, |x| dens.cdf(x));
    assert!(ks < 0.01, "KS = {ks}");
    assert!((0.0..=1.0).contains(&diag.acceptance_rate));
}

#[test]
fn one_particle_mala_matches_quadrature() {
    let ext = ExteriorConfiguration::new(vec![-1.3, 1.05, 2.4], 1.0, 10.0).unwrap();
    let pot = ConditionalPotential::new(InteractionKind::Riesz { beta: 1.0, s: 0.5 }, ext).unwrap();
    let dens = exact_density_1p(&pot, 20_001).unwrap();
    let cfg = SamplerConfig::new(1, 100_000, Scheme::Mala, 2);
    let (samples, _) = sample_conditional(&pot, &cfg).unwrap();
    let xs: Vec<f64> = samples.iter().map(|c| c.points()[0]).collect();
    let ks = ks_one_sample(&xs, |x| dens.cdf(x));
    assert!(ks < 0.01, "KS = {ks}");
}

#[test]
fn vanishing_beta_gives_independent_uniforms() {
    let pot = ConditionalPotential::free(InteractionKind::DysonLog { beta: 1e-9 }, 1.5).unwrap();
    let cfg = SamplerConfig::new(2, 100_000, Scheme::Metropolis, 3);
    let (samples, _) = sample_conditional(&pot, &cfg).unwrap();
    // order statistics of two uniforms: F_min = 1 − (1 − F)², F_max = F²
    let f = |x: f64| (x + 1.5) / 3.0;
    let lo: Vec<f64> = samples.iter().map(|c| c.points()[0]).collect();
    let hi: Vec<f64> = samples.iter().map(|c| c.points()[1]).collect();
    assert!(ks_one_sample(&lo, |x| 1.0 - (1.0 - f(x)).powi(2)) < 0.01);
    assert!(ks_one_sample(&hi, |x| f(x).powi(2)) < 0.01);
}

/// `E|x₁ − x₂|²` under `∝ |x₁ − x₂|^β` on `[-1, 1]²` by a tensor midpoint rule.
fn squared_gap_quadrature(beta: f64, n: usize) -> f64 {
    let h = 2.0 / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let d = (i as f64 - j as f64) * h;
            let w = d.abs().powf(beta);
            num += w * d * d;
            den += w;
        }
    }
    num / den
}

#[test]
fn two_particle_gap_moment_matches_quadrature() {
    let oracle = squared_gap_quadrature(2.0, 2000);
    assert!((oracle - 1.6).abs() < 1e-5, "{oracle}");
    let pot = ConditionalPotential::free(InteractionKind::DysonLog { beta: 2.0 }, 1.0).unwrap();
    let cfg = SamplerConfig::new(2, 100_000, Scheme::Metropolis, 4);
    let (samples, _) = sample_conditional(&pot, &cfg).unwrap();
    let m = samples.iter().map(|c| (c.points()[1] - c.points()[0]).powi(2)).sum::<f64>() / samples.len() as f64;
    assert!((m / oracle - 1.0).abs() < 0.01, "{m} vs {oracle}");
}

#[test]
fn samples_are_sorted_and_inside_the_window() {
    let pot = dyson_pm2(1.0);
    for scheme in [Scheme::Metropolis, Scheme::Mala] {
        let (samples, _) = sample_conditional(&pot, &SamplerConfig::new(3, 2000, scheme, 5)).unwrap();
        for c in &samples {
            assert!(c.lies_within(1.0));
            assert!(c.points().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn coordinate_order_does_not_change_the_law() {
    let pot = ConditionalPotential::free(InteractionKind::DysonLog { beta: 2.0 }, 1.5).unwrap();
    let mut a = SamplerConfig::new(3, 40_000, Scheme::Metropolis, 6);
    let mut b = a.clone();
    a.coordinate_order = Some(vec![0, 1, 2]);
    b.coordinate_order = Some(vec![2, 0, 1]);
    b.seed = 7;
    let (sa, _) = sample_conditional(&pot, &a).unwrap();
    let (sb, _) = sample_conditional(&pot, &b).unwrap();
    for i in 0..3 {
        let xa: Vec<f64> = sa.iter().map(|c| c.points()[i]).collect();
        let xb: Vec<f64> = sb.iter().map(|c| c.points()[i]).collect();
        let stat = |x: &[f64]| {
            let (ess, _) = effective_sample_size(x);
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let v = x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / x.len() as f64;
            (m, v / ess)
        };
        let ((ma, va), (mb, vb)) = (stat(&xa), stat(&xb));
        let z = (ma - mb) / (va + vb).sqrt();
        assert!(z.abs() < 4.0, "coordinate {i}: z = {z}");
    }
}

#[test]
fn fixed_seed_is_bit_reproducible() {
    let pot = dyson_pm2(2.0);
    let mut cfg = SamplerConfig::new(2, 500, Scheme::Mala, 8);
    cfg.chains = 3;
    let (a, da) = sample_conditional(&pot, &cfg).unwrap();
    let (b, db) = sample_conditional(&pot, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(da, db);
}

#[test]
fn circular_ensemble_single_point_is_uniform() {
    let th: Vec<f64> = sample_cbe_angles(1, 2.0, 100_000, 9).unwrap().into_iter().map(|v| v[0]).collect();
    assert!(ks_one_sample(&th, |x| x / (2.0 * PI)) < 0.01);
}

/// Bin masses of the gap law `∝ 1 − cos θ` on `[0, 2π)` by Simpson's rule.
fn gap_bin_masses(bins: usize) -> Vec<f64> {
    let w = 2.0 * PI / bins as f64;
    let sub = 200;
    let f = |t: f64| 1.0 - t.cos();
    let masses: Vec<f64> = (0..bins)
        .map(|b| {
            let a = b as f64 * w;
            let h = w / sub as f64;
            (0..=sub)
                .map(|i| {
                    let c = if i == 0 || i == sub { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    c * f(a + i as f64 * h)
                })
                .sum::<f64>()
                * h
                / 3.0
        })
        .collect();
    let total: f64 = masses.iter().sum();
    masses.iter().map(|m| m / total).collect()
}

#[test]
fn circular_ensemble_gap_histogram() {
    let bins = 20;
    let p = gap_bin_masses(bins);
    let n = 1_000_000;
    let mut counts = vec![0usize; bins];
    for th in sample_cbe_angles(2, 2.0, n, 10).unwrap() {
        let gap = (th[1] - th[0]).rem_euclid(2.0 * PI);
        counts[((gap / (2.0 * PI) * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let l1: f64 = counts.iter().zip(&p).map(|(&c, q)| (c as f64 / n as f64 - q).abs()).sum();
    assert!(l1 < 0.01, "relative L1 = {l1}");
}

#[test]
fn circular_ensemble_is_rotation_invariant() {
    let samples = sample_cbe_angles(3, 2.0, 20_000, 11).unwrap();
    let psi: Vec<f64> = samples.iter().step_by(10).map(|th| th.iter().sum::<f64>().rem_euclid(2.0 * PI)).collect();
    let p = rayleigh_p_value(&psi);
    assert!(p > 0.05, "p = {p}");
}

#[test]
fn scaled_circular_ensemble_has_unit_density() {
    for c in sample_cbe(8, 2.0, 100, 12).unwrap() {
        assert_eq!(c.count(), 8);
        assert!(c.points().iter().all(|x| (-4.0..4.0).contains(x)));
    }
}

#[test]
fn density_of_a_free_particle_is_uniform() {
    let pot = ConditionalPotential::free(InteractionKind::DysonLog { beta: 3.0 }, 1.5).unwrap();
    let d = exact_density_1p(&pot, 1001).unwrap();
    assert!(d.density.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn near_exterior_point_pushes_mass_away() {
    let ext = ExteriorConfiguration::new(vec![1.01], 1.0, 5.0).unwrap();
    let pot = ConditionalPotential::new(InteractionKind::DysonLog { beta: 2.0 }, ext).unwrap();
    assert!(exact_density_1p(&pot, 4001).unwrap().mean() < 0.0);
}

proptest! {
    #[test]
    fn tabulated_density_is_normalised(ext in prop::collection::vec(1.01..6.0f64, 1..6), signs in prop::collection::vec(any::<bool>(), 6), beta in 0.2..4.0f64, riesz in any::<bool>()) {
        let pts: Vec<f64> = ext.iter().zip(&signs).map(|(y, s)| if *s { *y } else { -*y }).collect();
        let kind = if riesz { InteractionKind::Riesz { beta, s: 0.5 } } else { InteractionKind::DysonLog { beta } };
        let pot = ConditionalPotential::new(kind, ExteriorConfiguration::new(pts, 1.0, 10.0).unwrap()).unwrap();
        let d = exact_density_1p(&pot, 2001).unwrap();
        prop_assert!((d.normalisation() - 1.0).abs() < 1e-10);
    }
}
