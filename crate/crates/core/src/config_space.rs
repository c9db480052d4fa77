//! Finite point configurations on the line and their transportation
//! distances.
//!
//! A [`Configuration`] is stored in canonical form: a non-decreasing list of
//! coordinates. Coincident points are representable (they are the
//! energy-infinite boundary cases) and can be detected with
//! [`Configuration::has_coincident_points`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Configuration {
    points: Vec<f64>,
}

impl Configuration {
    /// Builds a configuration, sorting the input.
    ///
    /// Panics on non-finite coordinates; use [`Configuration::try_new`] for
    /// untrusted input.
    pub fn new(points: impl Into<Vec<f64>>) -> Self {
        Self::try_new(points).expect("configuration coordinates must be finite")
    }

    pub fn try_new(points: impl Into<Vec<f64>>) -> Result<Self> {
        let mut points = points.into();
        if let Some(bad) = points.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite coordinate {bad}")));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn into_points(self) -> Vec<f64> {
        self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_coincident_points(&self) -> bool {
        self.points.windows(2).any(|w| w[0] == w[1])
    }

    /// Points with `|x| ≤ r` (closed window), order preserved.
    pub fn restrict(&self, r: f64) -> Configuration {
        Configuration {
            points: self.points.iter().copied().filter(|x| x.abs() <= r).collect(),
        }
    }

    /// Points with `|x| > r`.
    pub fn exterior_of(&self, r: f64) -> Configuration {
        Configuration {
            points: self.points.iter().copied().filter(|x| x.abs() > r).collect(),
        }
    }

    pub fn lies_within(&self, r: f64) -> bool {
        self.points.iter().all(|x| x.abs() <= r)
    }
}

impl TryFrom<Vec<f64>> for Configuration {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::try_new(points)
    }
}

impl From<Configuration> for Vec<f64> {
    fn from(c: Configuration) -> Self {
        c.points
    }
}

/// The frozen outside of a window: points with `|y| > r`. Points beyond the
/// cutoff `R` are kept but carry no energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExteriorConfiguration {
    points: Vec<f64>,
    r: f64,
    cutoff: f64,
}

impl ExteriorConfiguration {
    pub fn new(points: impl Into<Vec<f64>>, r: f64, cutoff: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("window radius must be positive, got {r}")));
        }
        if !(cutoff >= r) {
            return Err(Error::InvalidParameter(format!("cutoff {cutoff} must be at least r = {r}")));
        }
        let config = Configuration::try_new(points)?;
        if let Some(&y) = config.points().iter().find(|y| y.abs() <= r) {
            return Err(Error::InvalidParameter(format!(
                "exterior point {y} lies inside the window [-{r}, {r}]"
            )));
        }
        Ok(Self { points: config.into_points(), r, cutoff })
    }

    pub fn empty(r: f64) -> Self {
        Self { points: Vec::new(), r, cutoff: r }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Exterior points that interact: `r < |y| ≤ R`.
    pub fn active(&self) -> impl Iterator<Item = f64> + '_ {
        let cutoff = self.cutoff;
        self.points.iter().copied().filter(move |y| y.abs() <= cutoff)
    }
}

/// `restrict(γ, r)`.
pub fn restrict(gamma: &Configuration, r: f64) -> Configuration {
    gamma.restrict(r)
}

/// Squared optimal matching cost for equal counts. For sorted inputs on the
/// line the order-preserving pairing is optimal.
fn sorted_matching_cost(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared matching distance (order-preserving pairing); `+∞` when the
/// counts differ.
pub fn matching_cost(gamma: &Configuration, eta: &Configuration) -> f64 {
    if gamma.count() != eta.count() {
        return f64::INFINITY;
    }
    sorted_matching_cost(gamma.points(), eta.points())
}

/// L²-transportation distance; `+∞` when the counts differ.
pub fn matching_distance(gamma: &Configuration, eta: &Configuration) -> f64 {
    matching_cost(gamma, eta).sqrt()
}

/// Minimal squared matching cost by enumerating all bijections (Heap's
/// algorithm). Intended as an oracle for small counts.
pub fn brute_force_matching_cost(gamma: &[f64], eta: &[f64]) -> f64 {
    if gamma.len() != eta.len() {
        return f64::INFINITY;
    }
    let n = gamma.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| -> f64 {
        (0..n).map(|i| (gamma[i] - eta[p[i]]) * (gamma[i] - eta[p[i]])).sum()
    };
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Transportation-type distance: finite only when the configurations agree
/// exactly outside `[-r, r]` and carry the same number of points inside.
pub fn bar_distance(gamma: &Configuration, eta: &Configuration, r: f64) -> f64 {
    let outside_equal = gamma
        .points()
        .iter()
        .filter(|x| x.abs() > r)
        .eq(eta.points().iter().filter(|x| x.abs() > r));
    if !outside_equal {
        return f64::INFINITY;
    }
    if gamma.restrict(r).count() != eta.restrict(r).count() {
        return f64::INFINITY;
    }
    matching_distance(gamma, eta)
}

/// Sorted union of interior points with an exterior configuration.
pub fn merge(interior: &Configuration, exterior: &ExteriorConfiguration) -> Result<Configuration> {
    let r = exterior.r();
    if let Some(&x) = interior.points().iter().find(|x| x.abs() > r) {
        return Err(Error::OutsideWindow { point: x, r });
    }
    let mut points = interior.points().to_vec();
    points.extend_from_slice(exterior.points());
    Configuration::try_new(points)
}
