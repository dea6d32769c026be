use thiserror::Error;

/// Errors surfaced by grid states, channels, and trajectory runs.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum CimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Trace fell below the underflow threshold; the state collapsed
    /// numerically or an impossible measurement outcome was forced.
    #[error("trace underflow: trace = {trace:.3e}")]
    TraceUnderflow { trace: f64 },

    /// A displacement or rescale would move significant probability mass
    /// outside the representable grid support.
    #[error("state support leaves the grid: lost mass {lost:.3e} exceeds {limit:.3e}")]
    OffGrid { lost: f64, limit: f64 },

    /// The split-step integrator detected trace drift beyond tolerance even
    /// at the maximum substep refinement.
    #[error("integrator instability: trace drift {drift:.3e} per round trip")]
    Instability { drift: f64 },

    /// Measurement outcome distribution could not be normalized.
    #[error("measurement distribution not normalizable (mass = {mass:.3e})")]
    BadOutcomeDistribution { mass: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Fock-side state populated its highest truncation levels.
    #[error("Fock truncation overflow: population {population:.3e} above level {level}")]
    TruncationOverflow { level: usize, population: f64 },

    /// A trajectory aborted mid-run; the round index is 0-based.
    #[error("trajectory {seed} failed at round {round}: {source}")]
    TrajectoryFailed {
        seed: u64,
        round: usize,
        #[source]
        source: Box<CimError>,
    },
}

pub type Result<T> = std::result::Result<T, CimError>;
