//! Piecewise Chebyshev interpolation on an interval, used to tabulate smooth
//! far-field forces.

use std::f64::consts::PI;

/// Coefficients of the interpolant of `f` at `n` Chebyshev points of the
/// first kind on `[a, b]`.
fn coefficients<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Vec<f64> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let values: Vec<f64> = (0..n)
        .map(|j| {
            let theta = PI * (j as f64 + 0.5) / n as f64;
            f(mid + half * theta.cos())
        })
        .collect();
    let mut coeffs: Vec<f64> = (0..n)
        .map(|m| {
            let s: f64 = values
                .iter()
                .enumerate()
                .map(|(j, v)| v * (PI * m as f64 * (j as f64 + 0.5) / n as f64).cos())
                .sum();
            2.0 * s / n as f64
        })
        .collect();
    coeffs[0] *= 0.5;
    coeffs
}

/// Equal-width pieces, each a fixed-degree Chebyshev interpolant. Evaluation
/// is a short Clenshaw recurrence however many terms a single global series
/// would need.
#[derive(Clone, Debug)]
pub(crate) struct PiecewiseChebyshev {
    a: f64,
    inv_width: f64,
    terms: usize,
    /// `pieces × terms` coefficients, piece-major.
    coeffs: Vec<f64>,
}

impl PiecewiseChebyshev {
    pub(crate) fn fit<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize, terms: usize) -> Self {
        assert!(pieces >= 1 && terms >= 1 && b > a);
        let width = (b - a) / pieces as f64;
        let coeffs = (0..pieces)
            .flat_map(|p| {
                let lo = a + p as f64 * width;
                coefficients(&f, lo, lo + width, terms)
            })
            .collect();
        Self { a, inv_width: 1.0 / width, terms, coeffs }
    }

    #[inline]
    pub(crate) fn eval(&self, x: f64) -> f64 {
        let pieces = self.coeffs.len() / self.terms;
        let u = (x - self.a) * self.inv_width;
        let p = (u.max(0.0) as usize).min(pieces - 1);
        // Local variable in [-1, 1] (slightly beyond at the clamped ends).
        let t = 2.0 * (u - p as f64) - 1.0;
        let c = &self.coeffs[p * self.terms..(p + 1) * self.terms];
        let t2 = 2.0 * t;
        let (mut b1, mut b2) = (0.0, 0.0);
        for &ci in c[1..].iter().rev() {
            let b0 = ci + t2 * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        c[0] + t * b1 - b2
    }
}
