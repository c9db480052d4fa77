use loggas_core::flow::*;
use loggas_core::{ConditionalPotential, ExteriorConfiguration, InteractionKind};
use proptest::prelude::*;

fn dyson_k1() -> ConditionalPotential {
    let ext = ExteriorConfiguration::new(vec![-2.0, 2.0], 1.0, 10.0).unwrap();
    ConditionalPotential::new(InteractionKind::DysonLog { beta: 2.0 }, ext).unwrap()
}

fn grid(n: usize) -> Domain {
    Domain::Interval { r: 1.0, n }
}

fn bump(d: Domain) -> GridDensity {
    GridDensity::from_fn(d, |x| (-(x[0] - 0.3f64).powi(2) / 0.18).exp()).unwrap()
}

#[test]
fn clock_calibration_selects_one_half() {
    let cal = calibrate_clock(256, 1e-3, 0.5).unwrap();
    assert_eq!(cal.chosen, CLOCK);
    assert!(cal.residual <= 1e-3, "{cal:?}");
    // the alternatives are far off, so the choice is not a tie-break
    assert!(cal.candidates.iter().filter(|c| c.0 != CLOCK).all(|c| c.1 > 0.1));
}

#[test]
fn fokker_planck_matches_ou_closed_form() {
    let d = Domain::Interval { r: 2.0, n: 256 };
    let land = Landscape::interval(d, &OU_POTENTIAL).unwrap();
    let p0 = ou_closed_form(d, 0.0).unwrap();
    for t in [0.1, 0.5, 1.0] {
        let p = fokker_planck_evolve(&p0, &land, t, 2e-5).unwrap();
        assert!(p.l1_distance(&ou_closed_form(d, t).unwrap()) < 1e-3);
    }
}

#[test]
fn fokker_planck_conserves_mass_and_positivity() {
    let pot = dyson_k1();
    let d = grid(200);
    let land = Landscape::interval(d, &pot).unwrap();
    let p = fokker_planck_evolve(&bump(d), &land, 1.0, 2e-5).unwrap();
    assert!((p.mass() - 1.0).abs() < 1e-10);
    assert!(p.values.iter().all(|v| *v >= 0.0));
}

#[test]
fn fokker_planck_relaxes_to_gibbs() {
    let pot = dyson_k1();
    let d = grid(128);
    let land = Landscape::interval(d, &pot).unwrap();
    let p = fokker_planck_evolve(&bump(d), &land, 50.0, 5e-5).unwrap();
    assert!(p.l1_distance(&land.stationary().unwrap()) < 1e-6);
}

#[test]
fn triangle_flow_is_stationary_at_gibbs_and_relaxes() {
    let ext = ExteriorConfiguration::new(vec![-2.0, 2.0], 1.0, 10.0).unwrap();
    let pot = ConditionalPotential::new(InteractionKind::DysonLog { beta: 2.0 }, ext).unwrap();
    let d = Domain::Triangle { r: 1.0, n: 48 };
    let land = Landscape::pair(d, &pot).unwrap();
    let mu = land.stationary().unwrap();
    let dt = 0.5 * max_stable_dt(&land);
    let still = fokker_planck_evolve(&mu, &land, 0.2, dt).unwrap();
    assert!(still.l1_distance(&mu) < 1e-12);
    let p0 = GridDensity::uniform(d).unwrap();
    let e0 = entropy(&p0, &land).unwrap();
    let p1 = fokker_planck_evolve(&p0, &land, 0.2, dt).unwrap();
    let e1 = entropy(&p1, &land).unwrap();
    assert!(e1 < e0 && e1 >= 0.0);
    assert!((p1.mass() - 1.0).abs() < 1e-10);
    let rows = verify_dissipation(&land, &p0, &[0.05, 0.1], dt).unwrap();
    assert!(rows.iter().all(|r| r.relative_residual < 0.02), "{rows:?}");
}

#[test]
fn entropy_of_conditioned_gibbs_measure() {
    let pot = dyson_k1();
    let d = grid(256);
    let land = Landscape::interval(d, &pot).unwrap();
    let mu = land.stationary().unwrap();
    assert!(entropy(&mu, &land).unwrap().abs() < 1e-14);
    // ν = μ conditioned on [0, r]: Ent = −log μ([0, r])
    let half: f64 = mu.masses()[128..].iter().sum();
    let nu = GridDensity::from_fn(d, |x| if x[0] > 0.0 { 1.0 } else { 0.0 }).unwrap();
    let nu = GridDensity::new(d, nu.values.iter().zip(&mu.values).map(|(a, b)| a * b).collect()).unwrap();
    assert!((entropy(&nu, &land).unwrap() + half.ln()).abs() < 1e-12);
}

#[test]
fn dissipation_identity_holds() {
    let pot = dyson_k1();
    let d = grid(512);
    let land = Landscape::interval(d, &pot).unwrap();
    let ts: Vec<f64> = (2..=20).map(|i| i as f64 * 0.025).collect();
    let rows = verify_dissipation(&land, &bump(d), &ts, 1e-5).unwrap();
    for r in &rows {
        assert!(r.relative_residual < 0.02, "{r:?}");
        assert!(r.d_entropy < 0.0);
    }
    assert!(rows.windows(2).all(|w| w[1].entropy <= w[0].entropy));
    let still = verify_dissipation(&land, &land.stationary().unwrap(), &[0.1, 0.2], 1e-5).unwrap();
    assert!(still.iter().all(|r| r.dissipation.abs() < 1e-20 && r.d_entropy.abs() < 1e-10));
}

#[test]
fn fisher_information_is_stable_under_refinement() {
    let pot = dyson_k1();
    let f = |n: usize| {
        let d = grid(n);
        fisher_information(&bump(d), &Landscape::interval(d, &pot).unwrap()).unwrap()
    };
    let (a, b) = (f(256), f(512));
    assert!((a - b).abs() < 0.01 * b, "{a} {b}");
}

#[test]
fn conditioning_densities_have_nonnegative_entropy() {
    let pot = dyson_k1();
    let d = grid(128);
    let land = Landscape::interval(d, &pot).unwrap();
    let mu = land.stationary().unwrap();
    for (lo, hi) in [(-1.0, 0.0), (-0.3, 0.4), (0.5, 1.0)] {
        let nu = GridDensity::new(d, (0..d.len()).map(|i| {
            let x = d.center_1d(i);
            if (lo..hi).contains(&x) { mu.values[i] } else { 0.0 }
        }).collect()).unwrap();
        let mass: f64 = (0..d.len()).filter(|&i| (lo..hi).contains(&d.center_1d(i))).map(|i| mu.masses()[i]).sum();
        let e = entropy(&nu, &land).unwrap();
        assert!(e >= 0.0 && (e + mass.ln()).abs() < 1e-12);
    }
}

#[test]
fn jko_entropy_decreases_across_steps() {
    let pot = dyson_k1();
    let d = grid(128);
    let land = Landscape::interval(d, &pot).unwrap();
    let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.01).collect();
    let snaps = jko_flow(&bump(d), &pot, 1e-3, CLOCK, &times).unwrap();
    let ents: Vec<f64> = snaps.iter().map(|p| entropy(p, &land).unwrap()).collect();
    assert!(ents.windows(2).all(|w| w[1] < w[0]), "{ents:?}");
    assert!(snaps.iter().all(|p| (p.mass() - 1.0).abs() < 1e-10));
}

#[test]
fn evi_with_gibbs_reference_equilibrates() {
    let pot = dyson_k1();
    let d = grid(128);
    let land = Landscape::interval(d, &pot).unwrap();
    let mu = land.stationary().unwrap();
    let rows = verify_evi(&pot, &mu, &mu, &[0.0, 0.1, 0.2], 0.0, 5e-5).unwrap();
    assert!(rows.iter().all(|r| r.lhs.abs() < 1e-12 && r.rhs.abs() < 1e-12), "{rows:?}");
    let rows = verify_evi(&pot, &bump(d), &mu, &[0.0, 0.5, 8.0, 8.5], 0.0, 5e-5).unwrap();
    let last = rows.last().unwrap();
    assert!(last.lhs.abs() < 1e-6 && last.residual.abs() < 1e-6, "{last:?}");
}

#[test]
fn evi_residuals_are_nonnegative() {
    let pot = dyson_k1();
    let d = grid(256);
    let land = Landscape::interval(d, &pot).unwrap();
    let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.025).collect();
    let mu = land.stationary().unwrap();
    let shifted = GridDensity::from_fn(d, |x| if x[0] < -0.2 { 1.0 } else { 0.0 }).unwrap();
    for nu in [&mu, &shifted] {
        let rows = verify_evi(&pot, &bump(d), nu, &ts, 0.0, 1e-5).unwrap();
        for r in &rows {
            assert!(r.residual >= -5e-3, "{r:?}");
        }
    }
}

#[test]
fn jko_tracks_fokker_planck() {
    let pot = dyson_k1();
    let d = grid(256);
    let land = Landscape::interval(d, &pot).unwrap();
    let p0 = bump(d);
    let fp = fokker_planck_evolve(&p0, &land, 0.5, 1e-5).unwrap();
    let jk = jko_flow(&p0, &pot, 1e-3, CLOCK, &[0.5]).unwrap().pop().unwrap();
    assert!(fp.l1_distance(&jk) <= 1e-2, "{}", fp.l1_distance(&jk));
}

#[test]
fn jko_step_with_tiny_tau_is_nearly_identity() {
    let pot = dyson_k1();
    let d = grid(256);
    let land = Landscape::interval(d, &pot).unwrap();
    let mu = land.stationary().unwrap();
    let p = GridDensity::new(d, mu.values.iter().enumerate().map(|(i, v)| v * (1.0 + 0.3 * d.center_1d(i))).collect()).unwrap();
    let q = jko_step(&p, &pot, 1e-6, CLOCK).unwrap();
    assert!(q.l1_distance(&p) < 1e-6, "{}", q.l1_distance(&p));
    // the Gibbs density is (up to discretisation) a fixed point
    let m = jko_step(&mu, &pot, 1e-2, CLOCK).unwrap();
    assert!(m.l1_distance(&mu) < 1e-3);
}

#[test]
fn displacement_convexity_on_shifted_uniforms() {
    let pot = dyson_k1();
    let d = grid(256);
    let a = GridDensity::from_fn(d, |x| if (-0.8..0.2).contains(&x[0]) { 1.0 } else { 0.0 }).unwrap();
    let b = GridDensity::from_fn(d, |x| if (-0.2..0.8).contains(&x[0]) { 1.0 } else { 0.0 }).unwrap();
    let rep = verify_displacement_convexity(&pot, &a, &b, 9, 0.0).unwrap();
    assert!(rep.min_slack >= -1e-6, "{rep:?}");
    let same = verify_displacement_convexity(&pot, &a, &a, 9, 0.0).unwrap();
    assert!(same.min_slack.abs() < 1e-12);
    let mid = verify_displacement_convexity(&pot, &a, &b, 1, 0.0).unwrap();
    assert_eq!(mid.ts, vec![0.5]);
    assert!(mid.min_slack >= -5e-3);
}

#[test]
fn w2_of_translated_gaussians_is_the_shift() {
    let d = Domain::Interval { r: 3.0, n: 600 };
    let p = gaussian_cells(d, -0.4, 0.04).unwrap();
    let q = gaussian_cells(d, 0.5, 0.04).unwrap();
    assert!((w2_interval(&p, &q).unwrap() - 0.9).abs() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn w2_is_a_metric(a in prop::collection::vec(0.0f64..1.0, 40),
                      b in prop::collection::vec(0.0f64..1.0, 40),
                      c in prop::collection::vec(0.0f64..1.0, 40)) {
        let d = grid(40);
        let fix = |v: Vec<f64>| GridDensity::new(d, v.into_iter().map(|x| x + 1e-3).collect()).unwrap();
        let (p, q, s) = (fix(a), fix(b), fix(c));
        let pq = w2_interval(&p, &q).unwrap();
        prop_assert!((pq - w2_interval(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!(w2_interval(&p, &p).unwrap() < 1e-7);
        prop_assert!(pq <= w2_interval(&p, &s).unwrap() + w2_interval(&s, &q).unwrap() + 1e-12);
    }

    #[test]
    fn entropy_and_fisher_are_nonnegative(a in prop::collection::vec(0.0f64..1.0, 64)) {
        let pot = dyson_k1();
        let d = grid(64);
        let land = Landscape::interval(d, &pot).unwrap();
        let p = GridDensity::new(d, a.into_iter().map(|x| x + 1e-6).collect()).unwrap();
        prop_assert!(entropy(&p, &land).unwrap() >= -1e-14);
        prop_assert!(fisher_information(&p, &land).unwrap() >= 0.0);
    }

    #[test]
    fn flow_decreases_entropy(a in prop::collection::vec(0.01f64..1.0, 64)) {
        let pot = dyson_k1();
        let d = grid(64);
        let land = Landscape::interval(d, &pot).unwrap();
        let p = GridDensity::new(d, a).unwrap();
        let q = fokker_planck_evolve(&p, &land, 0.01, 0.5 * max_stable_dt(&land)).unwrap();
        prop_assert!(entropy(&q, &land).unwrap() <= entropy(&p, &land).unwrap() + 1e-14);
    }

    #[test]
    fn displacement_convexity_random_pairs(a in prop::collection::vec(0.05f64..1.0, 64),
                                           b in prop::collection::vec(0.05f64..1.0, 64)) {
        let pot = dyson_k1();
        let d = grid(64);
        let rep = verify_displacement_convexity(&pot, &GridDensity::new(d, a).unwrap(), &GridDensity::new(d, b).unwrap(), 9, 0.0).unwrap();
        prop_assert!(rep.min_slack >= -1e-9, "{:?}", rep);
    }
}
