//! Small statistical helpers shared by the samplers and the verification
//! suites.

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        let lo = f - i as f64 / n;
        let hi = (i + 1) as f64 / n - f;
        d.max(lo).max(hi)
    })
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Autocorrelation at `lag` (biased normalisation, as used by Geyer's
/// estimator).
fn autocorrelation(xs: &[f64], mean: f64, var: f64, lag: usize) -> f64 {
    let n = xs.len();
    let s: f64 = (0..n - lag).map(|i| (xs[i] - mean) * (xs[i + lag] - mean)).sum();
    s / (n as f64 * var)
}

/// Effective sample size with Geyer's initial positive sequence. Returns the
/// ESS and the last lag that entered the sum.
pub fn effective_sample_size(xs: &[f64]) -> (f64, usize) {
    let n = xs.len();
    if n < 4 {
        return (n as f64, 0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return (n as f64, 0);
    }
    let max_lag = (n / 2).min(2000);
    let mut tau = 1.0;
    let mut lag = 1;
    let mut last = 0;
    while lag + 1 < max_lag {
        let pair = autocorrelation(xs, mean, var, lag) + autocorrelation(xs, mean, var, lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        last = lag + 1;
        lag += 2;
    }
    ((n as f64 / tau).min(n as f64), last)
}

/// Rayleigh test of uniformity for angles. Returns the approximate p-value.
pub fn rayleigh_p_value(angles: &[f64]) -> f64 {
    let n = angles.len() as f64;
    let (c, s) = angles
        .iter()
        .fold((0.0, 0.0), |(c, s), a| (c + a.cos(), s + a.sin()));
    let r = (c * c + s * s).sqrt() / n;
    let z = n * r * r;
    // Zar's correction to the exponential tail
    let p = (-z).exp() * (1.0 + (2.0 * z - z * z) / (4.0 * n) - (24.0 * z - 132.0 * z * z + 76.0 * z.powi(3) - 9.0 * z.powi(4)) / (288.0 * n * n));
    p.clamp(0.0, 1.0)
}

/// `log(Σ exp(x_i))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_perfect_grid_is_half_step() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_one_sample(&xs, |x| x);
        assert!((d - 0.005).abs() < 1e-12);
    }

    #[test]
    fn two_sample_ks_identical_is_zero() {
        let xs = [0.3, 0.1, 0.7, 0.2];
        assert_eq!(ks_two_sample(&xs, &xs), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
    }

    #[test]
    fn ess_of_iid_sequence_is_close_to_n() {
        use rand::Rng;
        let mut rng = crate::rng::stream(1, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let (ess, _) = effective_sample_size(&xs);
        assert!(ess > 15_000.0, "{ess}");
    }

    #[test]
    fn log_sum_exp_handles_large_inputs() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
