use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {point} lies outside the window [-{r}, {r}]")]
    OutsideWindow { point: f64, r: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("particles collide")]
    Collision,

    #[error("particle counts differ ({0} vs {1})")]
    CountMismatch(usize, usize),

    #[error("infinite transportation distance between configurations")]
    InfiniteDistance,

    #[error("degenerate Markov chain: acceptance rate {0:.4} after burn-in")]
    DegenerateChain(f64),

    #[error("integrator unstable: {projections} order projections in {steps} steps")]
    Unstable { projections: usize, steps: usize },

    #[error("time step {dt} violates the stability bound {max_dt}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("density vanishes identically on the grid")]
    VanishingDensity,

    #[error("optimisation did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateChain(_)
                | Error::Unstable { .. }
                | Error::Cfl { .. }
                | Error::NoConvergence { .. }
                | Error::Collision
        )
    }
}
